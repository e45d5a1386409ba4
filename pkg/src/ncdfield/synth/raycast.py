from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .scene import Primitive, Scene

LIGHT_DIR = np.array([0.35, 0.25, 0.9]) / np.linalg.norm([0.35, 0.25, 0.9])
AMBIENT = 0.45


@dataclass
class RGBDFrame:
    color: np.ndarray  # (H, W, 3) in [0, 1]
    depth: np.ndarray  # (H, W) z-depth in meters, 0 = no hit
    labels: np.ndarray  # (H, W) class ids, background = scene.num_classes
    instances: np.ndarray  # (H, W) instance ids, background = -1


def _hit_box(o, d, p: Primitive):
    lo, hi = p.bounds()
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (lo - o) * inv
        t1 = (hi - o) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_enter = tmin.max(axis=-1)
    t_exit = tmax.min(axis=-1)
    hit = (t_enter <= t_exit) & (t_enter > 1e-6)
    axis = tmin.argmax(axis=-1)
    normal = np.zeros_like(d)
    idx = np.arange(d.shape[0])
    normal[idx, axis] = -np.sign(d[idx, axis])
    return np.where(hit, t_enter, np.inf), normal


def _hit_sphere(o, d, p: Primitive):
    c = np.asarray(p.center)
    oc = o - c
    a = np.einsum("ij,ij->i", d, d)
    b = 2 * np.einsum("ij,ij->i", oc, d)
    cc = np.einsum("ij,ij->i", oc, oc) - p.radius ** 2
    disc = b * b - 4 * a * cc
    sq = np.sqrt(np.maximum(disc, 0.0))
    t = (-b - sq) / (2 * a)
    hit = (disc >= 0) & (t > 1e-6)
    t = np.where(hit, t, np.inf)
    pts = o + np.where(hit, t, 0.0)[:, None] * d
    normal = (pts - c) / p.radius
    return t, normal


def render_rgbd(scene: Scene, camera: Camera) -> RGBDFrame:
    """Ray-cast the scene: nearest hit depth, Lambert-shaded albedo, exact labels."""
    o, d = camera.rays()
    h, w = camera.height, camera.width
    o, d = o.reshape(-1, 3), d.reshape(-1, 3)
    n = o.shape[0]
    best_t = np.full(n, np.inf)
    best_i = np.full(n, -1)
    best_normal = np.zeros((n, 3))
    for i, prim in enumerate(scene.primitives):
        t, normal = _hit_box(o, d, prim) if prim.kind == "box" else _hit_sphere(o, d, prim)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_i[closer] = i
        best_normal[closer] = normal[closer]

    hit = best_i >= 0
    depth = np.where(hit, best_t, 0.0)  # parameter along d equals z-depth
    labels = np.full(n, scene.background_class, dtype=np.int64)
    instances = np.full(n, -1, dtype=np.int64)
    color = np.zeros((n, 3))
    if scene.primitives:
        cls = np.array([p.class_id for p in scene.primitives])
        inst = np.array([p.instance_id for p in scene.primitives])
        albedo = np.array([p.color for p in scene.primitives], dtype=np.float64)
        labels[hit] = cls[best_i[hit]]
        instances[hit] = inst[best_i[hit]]
        lambert = np.clip(best_normal[hit] @ LIGHT_DIR, 0.0, 1.0)
        color[hit] = albedo[best_i[hit]] * (AMBIENT + (1 - AMBIENT) * lambert)[:, None]
    return RGBDFrame(
        color=color.reshape(h, w, 3),
        depth=depth.reshape(h, w),
        labels=labels.reshape(h, w),
        instances=instances.reshape(h, w),
    )
