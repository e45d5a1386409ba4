"""Scene description: axis-aligned boxes and spheres inside a room volume."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml


class SceneError(ValueError):
    pass


@dataclass
class Primitive:
    kind: str  # "box" or "sphere"
    center: tuple[float, float, float]
    size: tuple[float, float, float] | None = None  # full extents, boxes only
    radius: float | None = None  # spheres only
    class_id: int = 0
    instance_id: int = 0
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=np.float64)
        if self.kind == "box":
            half = 0.5 * np.asarray(self.size, dtype=np.float64)
        else:
            half = np.full(3, float(self.radius))
        return c - half, c + half

    def contains(self, p: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Whether points ``p`` (..., 3) lie inside the primitive grown by ``margin``."""
        c = np.asarray(self.center)
        if self.kind == "box":
            half = 0.5 * np.asarray(self.size) + margin
            return np.all(np.abs(p - c) <= half, axis=-1)
        return np.linalg.norm(p - c, axis=-1) <= self.radius + margin


@dataclass
class Scene:
    primitives: list[Primitive]
    room_min: tuple[float, float, float]
    room_max: tuple[float, float, float]
    known_classes: list[int]
    class_names: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return 1 + max((p.class_id for p in self.primitives), default=-1)

    @property
    def background_class(self) -> int:
        return self.num_classes

    @property
    def novel_classes(self) -> list[int]:
        known = set(self.known_classes)
        return [c for c in range(self.num_classes) if c not in known]

    def centroid(self) -> np.ndarray:
        if not self.primitives:
            return 0.5 * (np.asarray(self.room_min) + np.asarray(self.room_max))
        return np.mean([p.center for p in self.primitives], axis=0)

    def validate(self, require_novel: bool = False) -> None:
        lo, hi = np.asarray(self.room_min), np.asarray(self.room_max)
        if np.any(hi <= lo):
            raise SceneError("room_max must exceed room_min on every axis")
        for i, p in enumerate(self.primitives):
            if p.kind not in ("box", "sphere"):
                raise SceneError(f"primitive {i}: unknown kind {p.kind!r}")
            if p.kind == "box" and (p.size is None or min(p.size) <= 0):
                raise SceneError(f"primitive {i}: box needs positive size")
            if p.kind == "sphere" and (p.radius is None or p.radius <= 0):
                raise SceneError(f"primitive {i}: sphere needs positive radius")
            pmin, pmax = p.bounds()
            if np.any(pmin < lo - 1e-9) or np.any(pmax > hi + 1e-9):
                raise SceneError(f"primitive {i}: outside room bounds")
        present = {p.class_id for p in self.primitives}
        if present and present != set(range(self.num_classes)):
            raise SceneError(f"class ids must be dense in [0, C); got {sorted(present)}")
        if any(c < 0 or (present and c >= self.num_classes) for c in self.known_classes):
            raise SceneError("known class id out of range")
        if require_novel and (not self.known_classes or not self.novel_classes):
            raise SceneError("discovery needs at least one known and one novel class")

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            d = {k: v for k, v in asdict(p).items() if v is not None}
            for key in ("center", "size", "color"):
                if key in d:
                    d[key] = [float(x) for x in d[key]]
            prims.append(d)
        return {
            "room": {"min": list(self.room_min), "max": list(self.room_max)},
            "known_classes": list(self.known_classes),
            "class_names": list(self.class_names),
            "primitives": prims,
        }


def scene_from_dict(d: dict) -> Scene:
    try:
        prims = []
        for i, raw in enumerate(d.get("primitives", [])):
            raw = dict(raw)
            kind = raw.pop("type", raw.pop("kind", None))
            if "class" in raw:
                raw["class_id"] = raw.pop("class")
            if "instance" in raw:
                raw["instance_id"] = raw.pop("instance")
            for key in ("center", "size", "color"):
                if key in raw:
                    raw[key] = tuple(float(x) for x in raw[key])
            prims.append(Primitive(kind=kind, **raw))
        scene = Scene(
            primitives=prims,
            room_min=tuple(float(x) for x in d["room"]["min"]),
            room_max=tuple(float(x) for x in d["room"]["max"]),
            known_classes=[int(c) for c in d.get("known_classes", [])],
            class_names=list(d.get("class_names", [])),
        )
    except (KeyError, TypeError) as exc:
        raise SceneError(f"malformed scene description: {exc}") from exc
    scene.validate()
    return scene


def load_scene(path) -> Scene:
    path = Path(path)
    if not path.is_file():
        raise SceneError(f"scene file not found: {path}")
    try:
        d = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise SceneError(f"{path}: {exc}") from exc
    if not isinstance(d, dict):
        raise SceneError(f"{path}: expected a mapping at top level")
    return scene_from_dict(d)


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(yaml.safe_dump(scene.to_dict(), sort_keys=False))
