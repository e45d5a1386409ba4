"""Coordinate MLP mapping (position, view direction) to (color, embedding logits, density).

Density and embedding are read off the trunk before the view direction enters;
only the color branch sees the direction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diffcore as dc
from ..diffcore import container

NETS = ("coarse", "fine")


@dataclass
class FieldArch:
    width: int = 128
    depth: int = 4
    l_pos: int = 10
    l_dir: int = 4
    emb_dim: int = 37
    bounds_min: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bounds_max: tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def pos_dim(self) -> int:
        return 3 * (1 + 2 * self.l_pos)

    @property
    def dir_dim(self) -> int:
        return 3 * (1 + 2 * self.l_dir)

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        fan_in = self.pos_dim
        for i in range(self.depth):
            shapes[f"trunk{i}"] = (fan_in, self.width)
            fan_in = self.width
        shapes["density"] = (self.width, 1)
        shapes["embed"] = (self.width, self.emb_dim)
        shapes["feature"] = (self.width, self.width)
        shapes["color0"] = (self.width + self.dir_dim, self.width // 2)
        shapes["color1"] = (self.width // 2, 3)
        return shapes


@dataclass
class FieldParams:
    arch: FieldArch
    weights: dict[str, np.ndarray] = field(default_factory=dict)

    def tensors(self, requires_grad: bool = False) -> dict[str, dc.Tensor]:
        return {k: dc.Tensor(v, requires_grad=requires_grad) for k, v in self.weights.items()}

    def save(self, path, extra_meta: dict | None = None, extra_tensors: dict | None = None) -> None:
        meta = {"arch": asdict(self.arch), **(extra_meta or {})}
        container.save(path, {**self.weights, **(extra_tensors or {})}, meta)

    @classmethod
    def load(cls, path) -> tuple["FieldParams", dict, dict[str, np.ndarray]]:
        """Returns params, header metadata and any non-weight tensors stored alongside."""
        tensors, meta = container.load(path)
        a = dict(meta["arch"])
        a["bounds_min"], a["bounds_max"] = tuple(a["bounds_min"]), tuple(a["bounds_max"])
        arch = FieldArch(**a)
        names = {f"{net}.{layer}.{p}" for net in NETS for layer in arch.layer_shapes() for p in "wb"}
        weights = {k: v for k, v in tensors.items() if k in names}
        missing = names - set(weights)
        if missing:
            raise container.ContainerError(f"checkpoint missing {sorted(missing)[:3]}...")
        rest = {k: v for k, v in tensors.items() if k not in names}
        return cls(arch, weights), meta, rest


def init_field(arch: FieldArch, seed: int = 0, zero_embedding: bool = False) -> FieldParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for both networks."""
    rng = np.random.default_rng(seed)
    dtype = dc.get_dtype()
    weights = {}
    for net in NETS:
        for name, (fi, fo) in arch.layer_shapes().items():
            bound = 1.0 / np.sqrt(fi)
            weights[f"{net}.{name}.w"] = rng.uniform(-bound, bound, size=(fi, fo)).astype(dtype)
            weights[f"{net}.{name}.b"] = rng.uniform(-bound, bound, size=(fo,)).astype(dtype)
            if zero_embedding and name == "embed":
                weights[f"{net}.{name}.w"][:] = 0
                weights[f"{net}.{name}.b"][:] = 0
    return FieldParams(arch, weights)


def positional_encode(x, n_freqs: int) -> np.ndarray:
    """Per component c: [c, sin(2^0 pi c), cos(2^0 pi c), ..., sin(2^(L-1) pi c), cos(...)]."""
    if n_freqs < 0:
        raise ValueError("frequency count must be non-negative")
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    freqs = ((2.0 ** np.arange(n_freqs)) * np.pi).astype(x.dtype)
    ang = x[..., None] * freqs  # (..., D, L)
    parts = np.stack([np.sin(ang), np.cos(ang)], axis=-1).reshape(*x.shape, 2 * n_freqs)
    return np.concatenate([x[..., None], parts], axis=-1).reshape(*x.shape[:-1], -1)


def normalize_points(arch: FieldArch, pts: np.ndarray) -> np.ndarray:
    lo, hi = np.asarray(arch.bounds_min), np.asarray(arch.bounds_max)
    return 2.0 * (pts - lo) / (hi - lo) - 1.0


def _linear(params, name, x):
    return dc.matmul(x, params[name + ".w"]) + params[name + ".b"]


def field_forward(params: dict[str, dc.Tensor], arch: FieldArch, net: str,
                  pts: np.ndarray, dirs: np.ndarray):
    """Evaluate one network at world points (N, 3) seen along unit directions (N, 3).

    Returns (rgb (N,3), embedding logits (N,S), density (N,)) as tensors.
    """
    dtype = dc.get_dtype()
    h = dc.Tensor(positional_encode(normalize_points(arch, pts).astype(dtype), arch.l_pos))
    for i in range(arch.depth):
        h = dc.relu(_linear(params, f"{net}.trunk{i}", h))
    sigma = dc.softplus(_linear(params, f"{net}.density", h))
    emb = _linear(params, f"{net}.embed", h)
    feat = _linear(params, f"{net}.feature", h)
    d_enc = dc.Tensor(positional_encode(dirs.astype(dtype), arch.l_dir))
    hc = dc.relu(_linear(params, f"{net}.color0", dc.concat([feat, d_enc], axis=1)))
    rgb = dc.sigmoid(_linear(params, f"{net}.color1", hc))
    return rgb, emb, dc.reshape(sigma, (sigma.shape[0],))
