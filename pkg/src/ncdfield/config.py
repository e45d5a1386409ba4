"""Pipeline configuration: nested dataclasses read from and written to YAML."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import yaml

from .cluster import ClusterConfig
from .field import FieldArch, TrainConfig
from .geomseg import SegmentConfig
from .synth import OracleConfig


class ConfigError(ValueError):
    pass


REFERENCE_SCENE = "reference"


def reference_scene_path() -> Path:
    return Path(str(resources.files("ncdfield") / "data" / "reference_scene.yaml"))


@dataclass
class TrajectoryConfig:
    n_views: int = 40
    seed: int = 0
    width: int = 64
    height: int = 64
    fov: float = 60.0


@dataclass
class ArchConfig:
    width: int = 64
    depth: int = 3
    l_pos: int = 6
    l_dir: int = 2

    def build(self, emb_dim: int, bounds_min, bounds_max) -> FieldArch:
        return FieldArch(self.width, self.depth, self.l_pos, self.l_dir, emb_dim,
                         tuple(bounds_min), tuple(bounds_max))


@dataclass
class AblationConfig:
    use_entropy: bool = True
    use_embedding: bool = True
    use_field: bool = True


def _default_oracle() -> OracleConfig:
    return OracleConfig(sigma=0.5, kappa=0.5, margin=4.0, dim=4)


def _default_train() -> TrainConfig:
    return TrainConfig(batch_size=256, iterations=5000, n_coarse=16, n_fine=16, delta_cap=1.0)


@dataclass
class PipelineConfig:
    scene: str = REFERENCE_SCENE
    out: str = "runs/reference"
    threads: int = 1
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    oracle: OracleConfig = field(default_factory=_default_oracle)
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=_default_train)
    geomseg: SegmentConfig = field(default_factory=SegmentConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def scene_path(self) -> Path:
        return reference_scene_path() if self.scene == REFERENCE_SCENE else Path(self.scene)

    def set_seed(self, seed: int) -> None:
        self.trajectory.seed = seed
        self.oracle.seed = seed
        self.train.seed = seed

    def validate(self) -> None:
        checks = [
            ("trajectory.n_views", self.trajectory.n_views >= 1),
            ("trajectory.width", self.trajectory.width >= 3),
            ("trajectory.height", self.trajectory.height >= 3),
            ("trajectory.fov", 0 < self.trajectory.fov < 180),
            ("threads", self.threads >= 1),
            ("oracle.sigma", self.oracle.sigma >= 0),
            ("oracle.dim", self.oracle.dim >= 2),
            ("arch.width", self.arch.width >= 2),
            ("arch.depth", self.arch.depth >= 1),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"{name}: value out of range")
        for name, sub in (("train", self.train), ("geomseg", self.geomseg), ("cluster", self.cluster)):
            try:
                sub.validate()
            except ValueError as exc:
                raise ConfigError(f"{name}: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(_plain(self.to_dict()), sort_keys=False)

    def section_hash(self, *names: str) -> str:
        d = self.to_dict()
        blob = json.dumps({n: d[n] for n in names}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _coerce(value, default, path: str):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if isinstance(default, str):
        if isinstance(value, str):
            return value
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    if isinstance(default, (list, tuple)):
        if isinstance(value, (list, tuple)) and len(value) == len(default):
            return type(default)(_coerce(v, d, f"{path}[{i}]") for i, (v, d) in enumerate(zip(value, default)))
        raise ConfigError(f"{path}: expected a list of {len(default)}, got {value!r}")
    return value


def _apply(obj, data: dict, prefix: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {data!r}")
    names = {f.name for f in fields(obj)}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in names:
            raise ConfigError(f"{path}: unknown field")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            _apply(current, value, path)
        else:
            setattr(obj, key, _coerce(value, current, path))


def from_dict(data: dict | None) -> PipelineConfig:
    cfg = PipelineConfig()
    if data:
        _apply(cfg, data, "")
    cfg.validate()
    return cfg


def load_config(path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: invalid YAML{where}") from None
    try:
        return from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
