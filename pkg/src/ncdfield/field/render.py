from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import diffcore as dc
from ..synth.camera import Camera
from .losses import entropy_from_logits
from .model import FieldParams, field_forward
from .sampling import SampleSet, sample_hierarchical, sample_stratified


@dataclass
class RenderOutput:
    color: dc.Tensor  # (B, 3)
    logits: dc.Tensor  # (B, S)
    weights: dc.Tensor  # (B, K)
    depth: dc.Tensor  # (B,)
    opacity: dc.Tensor  # (B,)
    transmittance: dc.Tensor  # (B,) left over past the last sample


def composite(sigma: dc.Tensor, deltas: np.ndarray, values: list[dc.Tensor]):
    """Alpha-composite per-sample values (B, K, C) with densities (B, K).

    w_k = exp(-sum_{j<k} sigma_j delta_j) * (1 - exp(-sigma_k delta_k)).
    Returns (weights, composited values, residual transmittance).
    """
    tau = dc.mul(sigma, dc.Tensor(deltas))
    trans = dc.exp(dc.neg(dc.cumsum(tau, axis=1, exclusive=True)))
    alpha = dc.sub(1.0, dc.exp(dc.neg(tau)))
    w = dc.mul(trans, alpha)
    w3 = dc.reshape(w, (*w.shape, 1))
    outs = [dc.tsum(dc.mul(w3, v), axis=1) for v in values]
    residual = dc.exp(dc.neg(dc.tsum(tau, axis=1)))
    return w, outs, residual


def render_rays(params: dict[str, dc.Tensor], field: FieldParams, net: str,
                origins: np.ndarray, dirs: np.ndarray, samples: SampleSet,
                delta_cap: float = 1e10) -> RenderOutput:
    """Volume-render rays ``origins + t * dirs`` at the given sample depths.

    ``dirs`` need not be unit length; spacing is measured in world units.
    """
    arch = field.arch
    t = samples.t
    b, k = t.shape
    norms = np.linalg.norm(dirs, axis=-1, keepdims=True)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    unit = np.broadcast_to((dirs / norms)[:, None, :], (b, k, 3))
    rgb, emb, sigma = field_forward(params, arch, net, pts.reshape(-1, 3), unit.reshape(-1, 3))
    deltas = samples.deltas(delta_cap) * norms
    w, (color, logits), residual = composite(
        dc.reshape(sigma, (b, k)), deltas,
        [dc.reshape(rgb, (b, k, 3)), dc.reshape(emb, (b, k, arch.emb_dim))],
    )
    depth = dc.tsum(dc.mul(w, dc.Tensor(t)), axis=1)
    opacity = dc.tsum(w, axis=1)
    return RenderOutput(color, logits, w, depth, opacity, residual)


render_ray = render_rays


@dataclass
class RenderConfig:
    n_coarse: int = 32
    n_fine: int = 64
    near: float = 0.1
    far: float = 8.0
    delta_cap: float = 1e10
    chunk: int = 2048


def render_coarse_fine(params, field: FieldParams, origins, dirs, cfg: RenderConfig,
                       rng: np.random.Generator | None = None):
    """Coarse pass, importance resampling, fine pass. ``rng=None`` is deterministic."""
    coarse_s = sample_stratified(origins.shape[0], cfg.near, cfg.far, cfg.n_coarse, rng)
    coarse = render_rays(params, field, "coarse", origins, dirs, coarse_s, cfg.delta_cap)
    if cfg.n_fine > 0:
        fine_s = sample_hierarchical(coarse_s, coarse.weights.data, cfg.n_fine, cfg.near, cfg.far, rng)
    else:
        fine_s = coarse_s
    fine = render_rays(params, field, "fine", origins, dirs, fine_s, cfg.delta_cap)
    return coarse, fine


@dataclass
class ViewRender:
    color: np.ndarray  # (H, W, 3)
    logits: np.ndarray  # (H, W, S)
    entropy: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W)


def render_view(field: FieldParams, camera: Camera, cfg: RenderConfig | None = None) -> ViewRender:
    cfg = cfg or RenderConfig()
    params = field.tensors()
    o, d = camera.rays()
    o, d = o.reshape(-1, 3), d.reshape(-1, 3)
    cols, logs, deps = [], [], []
    for s in range(0, o.shape[0], cfg.chunk):
        _, fine = render_coarse_fine(params, field, o[s:s + cfg.chunk], d[s:s + cfg.chunk], cfg)
        cols.append(fine.color.data)
        logs.append(fine.logits.data)
        deps.append(fine.depth.data)
    h, w = camera.height, camera.width
    logits = np.concatenate(logs).reshape(h, w, -1)
    return ViewRender(
        color=np.concatenate(cols).reshape(h, w, 3),
        logits=logits,
        entropy=entropy_from_logits(logits),
        depth=np.concatenate(deps).reshape(h, w),
    )


def render_views(field: FieldParams, cameras: list[Camera], cfg: RenderConfig | None = None,
                 threads: int = 1) -> list[ViewRender]:
    """Full-frame color, logits, entropy and depth for each camera."""
    if threads <= 1:
        return [render_view(field, c, cfg) for c in cameras]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda c: render_view(field, c, cfg), cameras))
