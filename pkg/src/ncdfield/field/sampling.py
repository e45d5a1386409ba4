from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class SampleSet:
    """Per-ray sample depths ``t`` of shape (B, K), ascending along each row."""

    t: np.ndarray
    fallback: np.ndarray = field(default=None)  # (B,) rays that got uniform fine samples

    def __post_init__(self):
        if self.fallback is None:
            self.fallback = np.zeros(self.t.shape[0], dtype=bool)

    def deltas(self, cap: float) -> np.ndarray:
        d = np.empty_like(self.t)
        d[:, :-1] = np.diff(self.t, axis=1)
        d[:, -1] = cap
        return d


def sample_stratified(n_rays: int, t_near: float, t_far: float, k: int,
                      rng: np.random.Generator | None = None) -> SampleSet:
    """One sample per equal-width bin of [t_near, t_far]; bin centers if ``rng`` is None."""
    if not (t_far > t_near >= 0):
        raise ValueError(f"degenerate bounds: near={t_near}, far={t_far}")
    if k < 1:
        raise ValueError("need at least one sample per ray")
    edges = np.linspace(t_near, t_far, k + 1)
    lo, width = edges[:-1], np.diff(edges)
    u = 0.5 * np.ones((n_rays, k)) if rng is None else rng.uniform(size=(n_rays, k))
    return SampleSet(lo + u * width)


def sample_hierarchical(coarse: SampleSet, weights: np.ndarray, k_fine: int, t_near: float,
                        t_far: float, rng: np.random.Generator | None = None) -> SampleSet:
    """Inverse-transform samples from the piecewise-constant PDF of the coarse weights.

    Bin k spans the midpoints around coarse sample k (clipped to the bounds) and
    carries probability proportional to its weight. Returns the fine samples merged
    with the coarse ones, sorted per ray. Rays whose weights are all zero get uniform
    samples over [t_near, t_far] and are flagged in ``fallback``.
    """
    t = coarse.t
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("coarse weights must be non-negative")
    n, k = t.shape
    mids = 0.5 * (t[:, 1:] + t[:, :-1])
    edges = np.concatenate([np.full((n, 1), t_near), mids, np.full((n, 1), t_far)], axis=1)
    total = weights.sum(axis=1, keepdims=True)
    empty = total[:, 0] <= 1e-12
    pdf = np.where(empty[:, None], 0.0, weights / np.where(total > 0, total, 1.0))
    cdf = np.concatenate([np.zeros((n, 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0

    if rng is None:
        u = np.broadcast_to((np.arange(k_fine) + 0.5) / k_fine, (n, k_fine)).copy()
    else:
        u = rng.uniform(size=(n, k_fine))
    # bin index j such that cdf[j] <= u < cdf[j+1], skipping zero-mass bins
    j = (u[:, :, None] >= cdf[:, None, 1:-1]).sum(axis=-1)
    rows = np.arange(n)[:, None]
    c0 = cdf[rows, j]
    p = pdf[rows, j]
    frac = np.where(p > 0, (u - c0) / np.where(p > 0, p, 1.0), 0.5)
    frac = np.clip(frac, 0.0, 1.0)
    e0, e1 = edges[rows, j], edges[rows, j + 1]
    fine = e0 + frac * (e1 - e0)
    if np.any(empty):
        log.debug("%d rays with zero coarse weight fell back to uniform sampling", int(empty.sum()))
        fine[empty] = t_near + u[empty] * (t_far - t_near)
    merged = np.sort(np.concatenate([t, fine], axis=1), axis=1)
    return SampleSet(merged, fallback=empty)
