"""Per-segment descriptors built from rendered embedding and entropy maps.

Each segment is summarized by the mean of its pixels' embedding logits followed
by the mean of their entropies, giving one fixed-length vector per segment
whatever its size.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geomseg import SegmentSet


@dataclass
class SegmentFeature:
    segment: int
    feature: np.ndarray  # (S + 1,) unless channels were dropped
    pixels: int
    frame_index: int = 0

    @property
    def dim(self) -> int:
        return self.feature.shape[0]


@dataclass
class SegmentQuery:
    segment: int
    logits: np.ndarray  # (n, S)
    entropy: np.ndarray  # (n,)


def query_segment_features(segments: SegmentSet, embedding: np.ndarray,
                           entropy: np.ndarray) -> list[SegmentQuery]:
    """Per segment, the logits and entropies of the pixels under its mask."""
    embedding = np.asarray(embedding)
    entropy = np.asarray(entropy)
    hw = segments.labels.shape
    if embedding.shape[:2] != hw or entropy.shape != hw:
        raise ValueError(
            f"resolution mismatch: segments {hw}, embedding {embedding.shape[:2]}, entropy {entropy.shape}")
    out = []
    for sid in segments.ids:
        m = segments.labels == sid
        out.append(SegmentQuery(sid, embedding[m], entropy[m]))
    return out


def feature_modulation(segments: SegmentSet, queried: list[SegmentQuery],
                       use_embedding: bool = True, use_entropy: bool = True,
                       entropy_weight: float = 1.0) -> list[SegmentFeature]:
    """Mean-pooled logits concatenated with mean-pooled entropy, one vector per segment.

    The two flags drop either part, for ablations.
    """
    if not (use_embedding or use_entropy):
        raise ValueError("at least one of embedding and entropy must be kept")
    feats = []
    for q in queried:
        if len(q.entropy) == 0:
            raise ValueError(f"segment {q.segment} is empty")
        parts = []
        if use_embedding:
            parts.append(q.logits.astype(np.float64).mean(axis=0))
        if use_entropy:
            parts.append([entropy_weight * float(q.entropy.astype(np.float64).mean())])
        h = np.concatenate(parts)
        if not np.all(np.isfinite(h)):
            raise ValueError(f"segment {q.segment} has a non-finite feature")
        feats.append(SegmentFeature(q.segment, h, len(q.entropy), segments.frame_index))
    return feats


def modulate_frame(segments: SegmentSet, embedding: np.ndarray, entropy: np.ndarray,
                   **kw) -> list[SegmentFeature]:
    return feature_modulation(segments, query_segment_features(segments, embedding, entropy), **kw)


def save_features(path, feats: list[SegmentFeature]) -> None:
    """CSV rows: frame, segment, pixel count, feature values."""
    dim = feats[0].dim if feats else 0
    lines = ["frame,segment,pixels," + ",".join(f"h{i}" for i in range(dim))]
    for f in feats:
        lines.append(f"{f.frame_index},{f.segment},{f.pixels}," + ",".join(repr(float(v)) for v in f.feature))
    Path(path).write_text("\n".join(lines) + "\n")


def load_features(path) -> list[SegmentFeature]:
    rows = Path(path).read_text().splitlines()[1:]
    out = []
    for r in rows:
        vals = r.split(",")
        out.append(SegmentFeature(int(vals[1]), np.array([float(v) for v in vals[3:]]), int(vals[2]), int(vals[0])))
    return out
