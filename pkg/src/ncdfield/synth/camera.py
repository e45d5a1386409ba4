from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Scene, SceneError


@dataclass
class Camera:
    """Pinhole camera; x right, y down, z forward. ``rotation`` maps camera to world."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6 or np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")

    @property
    def intrinsics(self) -> tuple[float, float, float, float]:
        return (self.fx, self.fy, self.cx, self.cy)

    def pixel_directions(self) -> np.ndarray:
        """Camera-frame ray directions (H, W, 3) through pixel centers, z component 1."""
        u = np.arange(self.width) + 0.5
        v = np.arange(self.height) + 0.5
        uu, vv = np.meshgrid(u, v)
        return np.stack([(uu - self.cx) / self.fx, (vv - self.cy) / self.fy, np.ones_like(uu)], -1)

    def rays(self) -> tuple[np.ndarray, np.ndarray]:
        """World-frame origins and directions (H, W, 3).

        Directions are not normalized: the parameter along each ray equals z-depth.
        """
        d = self.pixel_directions() @ self.rotation.T
        o = np.broadcast_to(self.translation, d.shape).copy()
        return o, d

    def project(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates and depth of world points."""
        pc = (np.asarray(p) - self.translation) @ self.rotation
        z = pc[..., 2]
        uv = np.stack([self.fx * pc[..., 0] / z + self.cx, self.fy * pc[..., 1] / z + self.cy], -1)
        return uv, z

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    eye, target, up = (np.asarray(x, dtype=np.float64) for x in (eye, target, up))
    z = target - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-8:
        x = np.cross(z, (0.0, 1.0, 0.0))
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def make_camera(eye, target, width=64, height=64, fov_deg=60.0) -> Camera:
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
    return Camera(f, f, width / 2, height / 2, width, height, look_at(eye, target), eye)


def make_trajectory(scene: Scene, n_views: int, seed: int, width: int = 64, height: int = 64,
                    fov_deg: float = 60.0, margin: float = 0.4, height_range=(1.1, 1.7),
                    jitter: float = 0.3, max_tries: int = 10000) -> list[Camera]:
    """Random cameras in free space, each aimed near the scene centroid."""
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.asarray(scene.room_min, dtype=np.float64) + margin
    hi = np.asarray(scene.room_max, dtype=np.float64) - margin
    zlo, zhi = max(lo[2], height_range[0]), min(hi[2], height_range[1])
    if np.any(hi[:2] <= lo[:2]) or zhi <= zlo:
        raise SceneError("scene has no free space for cameras")
    lo = np.array([lo[0], lo[1], zlo])
    hi = np.array([hi[0], hi[1], zhi])
    centroid = scene.centroid()
    cams: list[Camera] = []
    tries = 0
    while len(cams) < n_views:
        tries += 1
        if tries > max_tries:
            raise SceneError("scene has no free space for cameras")
        eye = rng.uniform(lo, hi)
        if any(p.contains(eye, margin) for p in scene.primitives):
            continue
        target = centroid + rng.uniform(-jitter, jitter, size=3)
        if np.linalg.norm(target - eye) < 0.5:
            continue
        cams.append(make_camera(eye, target, width, height, fov_deg))
    return cams
