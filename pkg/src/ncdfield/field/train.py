from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import diffcore as dc
from ..synth.camera import Camera
from .losses import embedding_kl_loss, photometric_loss, total_loss
from .model import FieldArch, FieldParams, init_field
from .render import RenderConfig, render_coarse_fine

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 1024
    lr: float = 5e-4
    iterations: int = 2000
    lam: float = 1.0
    n_coarse: int = 32
    n_fine: int = 64
    near: float = 0.1
    far: float = 8.0
    delta_cap: float = 1e10
    seed: int = 0

    def validate(self) -> None:
        for name in ("batch_size", "lr", "iterations", "n_coarse", "near", "far"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.n_fine < 0:
            raise ValueError("n_fine must be non-negative")
        if self.far <= self.near:
            raise ValueError("far must exceed near")

    def render_config(self) -> RenderConfig:
        return RenderConfig(self.n_coarse, self.n_fine, self.near, self.far, self.delta_cap)


@dataclass
class RayDataset:
    """Flattened training rays from all posed frames."""

    origins: np.ndarray  # (R, 3)
    dirs: np.ndarray  # (R, 3)
    colors: np.ndarray  # (R, 3)
    logits: np.ndarray  # (R, S)
    valid: np.ndarray  # (R,) rays with a supervised embedding

    @classmethod
    def from_frames(cls, cameras: list[Camera], colors, logits, valid) -> "RayDataset":
        if not cameras:
            raise ValueError("need at least one posed frame")
        dims = {np.shape(l)[-1] for l in logits}
        if len(dims) != 1:
            raise ValueError(f"inconsistent embedding dimension across frames: {dims}")
        os, ds = zip(*(c.rays() for c in cameras))
        return cls(
            origins=np.concatenate([o.reshape(-1, 3) for o in os]),
            dirs=np.concatenate([d.reshape(-1, 3) for d in ds]),
            colors=np.concatenate([np.reshape(c, (-1, 3)) for c in colors]),
            logits=np.concatenate([np.reshape(l, (-1, dims.copy().pop())) for l in logits]),
            valid=np.concatenate([np.reshape(v, -1) for v in valid]).astype(bool),
        )

    @property
    def emb_dim(self) -> int:
        return self.logits.shape[1]

    def __len__(self) -> int:
        return self.origins.shape[0]


@dataclass
class TrainState:
    params: FieldParams
    adam: dc.AdamState
    iteration: int = 0
    history: list[tuple[int, float, float, float]] = field(default_factory=list)

    def save(self, path, cfg: TrainConfig, extra_meta: dict | None = None) -> None:
        extra = {}
        for k in self.params.weights:
            extra[f"adam.m.{k}"] = self.adam.m.get(k, np.zeros_like(self.params.weights[k]))
            extra[f"adam.v.{k}"] = self.adam.v.get(k, np.zeros_like(self.params.weights[k]))
        meta = {
            "train": asdict(cfg),
            "iteration": self.iteration,
            "adam": {"step": self.adam.step, "lr": self.adam.lr, "beta1": self.adam.beta1,
                     "beta2": self.adam.beta2, "eps": self.adam.eps},
            **(extra_meta or {}),
        }
        self.params.save(path, extra_meta=meta, extra_tensors=extra)

    @classmethod
    def load(cls, path) -> tuple["TrainState", dict]:
        params, meta, rest = FieldParams.load(path)
        a = meta.get("adam", {})
        adam = dc.AdamState(lr=a.get("lr", 5e-4), beta1=a.get("beta1", 0.9),
                            beta2=a.get("beta2", 0.999), eps=a.get("eps", 1e-8),
                            step=a.get("step", 0))
        if adam.step:
            for k in params.weights:
                adam.m[k] = rest[f"adam.m.{k}"].copy()
                adam.v[k] = rest[f"adam.v.{k}"].copy()
        return cls(params, adam, meta.get("iteration", 0)), meta


def train_step(state: TrainState, data: RayDataset, cfg: TrainConfig):
    """One Adam step on a random ray batch; batch choice depends only on (seed, iteration)."""
    rng = np.random.default_rng([cfg.seed, state.iteration])
    idx = rng.integers(0, len(data), size=min(cfg.batch_size, len(data)))
    params = state.params.tensors(requires_grad=True)
    dtype = dc.get_dtype()
    coarse, fine = render_coarse_fine(params, state.params, data.origins[idx], data.dirs[idx],
                                      cfg.render_config(), rng)
    target = data.colors[idx].astype(dtype)
    l_p = photometric_loss(coarse.color, fine.color, target)
    l_e = embedding_kl_loss(data.logits[idx], fine.logits, mask=data.valid[idx])
    loss = total_loss(l_p, l_e, cfg.lam)
    grads = dc.gradients(loss, params)
    dc.adam_step(state.params.weights, grads, state.adam)
    state.iteration += 1
    return float(l_p.data), float(l_e.data), float(loss.data)


def train(data: RayDataset, cfg: TrainConfig, arch: FieldArch | None = None,
          state: TrainState | None = None, log_every: int = 500) -> TrainState:
    """Minimize photometric + lam * embedding loss; resumes from ``state`` if given."""
    cfg.validate()
    if state is None:
        arch = arch or FieldArch(emb_dim=data.emb_dim)
        if arch.emb_dim != data.emb_dim:
            raise ValueError(f"arch emb_dim {arch.emb_dim} != data {data.emb_dim}")
        state = TrainState(init_field(arch, cfg.seed), dc.AdamState(lr=cfg.lr))
    start = time.time()
    while state.iteration < cfg.iterations:
        it = state.iteration
        try:
            l_p, l_e, l = train_step(state, data, cfg)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}") from exc
        if not np.isfinite(l):
            raise TrainingDiverged(f"iteration {it}: non-finite loss {l}")
        state.history.append((it, l_p, l_e, l))
        if log_every and (it % log_every == 0 or it == cfg.iterations - 1):
            log.info("iter %d  L_p %.4f  L_e %.4f  L %.4f  (%.1fs)", it, l_p, l_e, l, time.time() - start)
    return state


def write_loss_csv(path, history) -> None:
    lines = ["iteration,L_p,L_e,L"]
    lines += [f"{i},{a:.9g},{b:.9g},{c:.9g}" for i, a, b, c in history]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
