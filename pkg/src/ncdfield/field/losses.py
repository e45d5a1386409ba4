from __future__ import annotations

import numpy as np

from .. import diffcore as dc


def photometric_loss(coarse, fine, target) -> dc.Tensor:
    """Sum over rays of squared L2 color error, coarse plus fine."""
    target = dc.as_tensor(target)
    ec = dc.sub(coarse, target)
    ef = dc.sub(fine, target)
    return dc.add(dc.tsum(dc.mul(ec, ec)), dc.tsum(dc.mul(ef, ef)))


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _softmax64(logits: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax64(logits))


def embedding_kl_loss(target_logits, rendered, mask: np.ndarray | None = None) -> dc.Tensor:
    """Forward KL(softmax(target) || softmax(rendered)), summed over rays.

    ``mask`` (B,) selects the rays that contribute.
    """
    rendered = dc.as_tensor(rendered)
    target_logits = np.asarray(target_logits)
    if target_logits.shape != rendered.shape:
        raise ValueError(f"shape mismatch: target {target_logits.shape}, rendered {rendered.shape}")
    if rendered.shape[-1] < 2:
        raise ValueError("KL needs at least two classes")
    log_p = _log_softmax64(target_logits)
    p = np.exp(log_p)
    if mask is not None:
        p = p * np.asarray(mask, dtype=np.float64).reshape(-1, 1)
    dtype = dc.get_dtype()
    # both terms go through the same sum so identical inputs cancel exactly
    p_t = dc.Tensor(p.astype(dtype))
    plogp = float(dc.tsum(dc.mul(p_t, dc.Tensor(log_p.astype(dtype)))).data)
    cross = dc.tsum(dc.mul(p_t, dc.log_softmax(rendered, axis=-1)))
    return dc.sub(plogp, cross)


def total_loss(l_p, l_e, lam: float) -> dc.Tensor:
    if lam < 0:
        raise ValueError("embedding loss weight must be non-negative")
    return dc.add(l_p, dc.mul(l_e, float(lam)))


def pixel_entropy(probs) -> np.ndarray | float:
    """Shannon entropy (nats) of probability vectors along the last axis; 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError("negative probability")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("probabilities must sum to 1")
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = -terms.sum(axis=-1)
    return float(h) if h.ndim == 0 else h


def entropy_from_logits(logits: np.ndarray) -> np.ndarray:
    return np.clip(pixel_entropy(_softmax64(logits)), 0.0, None)
