"""Synthetic posed RGB-D frames and an embedding oracle."""

from .camera import Camera, look_at, make_camera, make_trajectory
from .oracle import (
    EmbeddingFrame,
    OracleConfig,
    base_logits,
    entropy_np,
    novel_signatures,
    oracle_embedding,
    softmax_np,
)
from .raycast import RGBDFrame, render_rgbd
from .scene import Primitive, Scene, SceneError, load_scene, save_scene, scene_from_dict

__all__ = [
    "Camera", "look_at", "make_camera", "make_trajectory", "EmbeddingFrame",
    "OracleConfig", "base_logits", "entropy_np", "novel_signatures", "oracle_embedding",
    "softmax_np",
    "RGBDFrame", "render_rgbd", "Primitive", "Scene", "SceneError", "load_scene",
    "save_scene", "scene_from_dict",
]
