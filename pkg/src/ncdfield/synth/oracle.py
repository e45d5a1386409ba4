"""Stand-in for a closed-set segmentation network's pre-softmax features.

Known classes get a clean peak at their own slot; novel classes look confused:
a near-uniform vector over the known slots, tilted by ``kappa`` away from one known
slot per novel class, so it never peaks on a slot the network does not know.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raycast import RGBDFrame
from .scene import Scene


@dataclass
class OracleConfig:
    sigma: float = 0.0  # Gaussian noise std on every logit
    kappa: float = 0.0  # novel-class tilt: 0 = exactly uniform over known slots
    margin: float = 1.0  # logit height of the known-class peak
    dim: int = 37  # embedding dimension S
    off_logit: float = -30.0  # logit of slots that belong to no known class
    seed: int = 0


@dataclass
class EmbeddingFrame:
    logits: np.ndarray  # (H, W, S)
    frame_index: int


def _dip_rows(k: int) -> np.ndarray:
    """Zero-mean unit patterns over ``k`` slots, row j flat except a dip at slot k-1-j.

    Any two rows have cosine -1/(k-1), and each has cosine at most 1/(k-1)
    with a (centred or raw) known-class peak, so novel classes stay apart from
    each other and from every known class.
    """
    rows = np.ones((k, k))
    rows[np.arange(k), k - 1 - np.arange(k)] = 1.0 - k
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


def novel_signatures(scene: Scene) -> dict[int, np.ndarray]:
    """Unit-norm pattern over the known slots for each novel class."""
    k = len(scene.known_classes)
    if k < 2:
        return {c: np.zeros(k) for c in scene.novel_classes}
    rows = _dip_rows(k)
    return {c: rows[i % len(rows)] for i, c in enumerate(scene.novel_classes)}


def base_logits(scene: Scene, cfg: OracleConfig) -> np.ndarray:
    """Noise-free logits per class id (rows), background row last."""
    known = sorted(scene.known_classes)
    if known and max(known) >= cfg.dim:
        raise ValueError(f"embedding dim {cfg.dim} too small for known class {max(known)}")
    table = np.full((scene.num_classes + 1, cfg.dim), cfg.off_logit)
    table[:, known] = 0.0
    for c in known:
        table[c, c] = cfg.margin
    for c, sig in novel_signatures(scene).items():
        table[c, known] = cfg.kappa * cfg.margin * sig
    return table


def oracle_embedding(scene: Scene, frame: RGBDFrame, cfg: OracleConfig,
                     frame_index: int = 0) -> EmbeddingFrame:
    if cfg.sigma < 0:
        raise ValueError("oracle noise sigma must be non-negative")
    labels = frame.labels
    if labels.min() < 0 or labels.max() > scene.background_class:
        raise ValueError("frame labels outside the scene's class range")
    logits = base_logits(scene, cfg)[labels]
    if cfg.sigma > 0:
        rng = np.random.default_rng([cfg.seed, frame_index])
        logits = logits + rng.normal(0.0, cfg.sigma, size=logits.shape)
    return EmbeddingFrame(logits=logits.astype(np.float32), frame_index=frame_index)


def softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def entropy_np(logits: np.ndarray) -> np.ndarray:
    p = softmax_np(np.asarray(logits, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)
