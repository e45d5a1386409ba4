"""Depth-only segmentation into convex surface patches.

A pixel pair is cut when the surface folds concavely between them by more than
an angle threshold, or when the back-projected points are far apart relative to
their depth. What remains is split into 4-connected components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imageio import write_pgm16

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


@dataclass
class SegmentConfig:
    angle_thresh: float = 10.0  # degrees
    rel_thresh: float = 0.05
    min_pixels: int = 20

    def validate(self) -> None:
        if not 0 < self.angle_thresh < 180:
            raise ValueError("angle_thresh must be in (0, 180) degrees")
        if self.rel_thresh <= 0:
            raise ValueError("rel_thresh must be positive")
        if self.min_pixels < 1:
            raise ValueError("min_pixels must be at least 1")


@dataclass
class NormalMap:
    normals: np.ndarray  # (H, W, 3) unit, camera frame, facing the camera
    valid: np.ndarray  # (H, W)
    points: np.ndarray  # (H, W, 3) back-projected camera-frame points


@dataclass
class SegmentSet:
    labels: np.ndarray  # (H, W) int32, 0 = unsegmented
    counts: dict[int, int] = field(default_factory=dict)
    frame_index: int = 0

    @property
    def ids(self) -> list[int]:
        return sorted(self.counts)

    def __len__(self) -> int:
        return len(self.counts)


def _intrinsics(intr) -> tuple[float, float, float, float]:
    if hasattr(intr, "intrinsics"):
        return intr.intrinsics
    fx, fy, cx, cy = intr
    return float(fx), float(fy), float(cx), float(cy)


def backproject(depth: np.ndarray, intrinsics) -> np.ndarray:
    fx, fy, cx, cy = _intrinsics(intrinsics)
    h, w = depth.shape
    uu, vv = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    return np.stack([(uu - cx) / fx * depth, (vv - cy) / fy * depth, depth], axis=-1)


def _tangent(pts: np.ndarray, valid: np.ndarray, axis: int):
    """Per-pixel tangent along ``axis``: the one-sided difference on the straighter side.

    Each side is scored by how much its difference changes one step further out.
    Picking the straighter side keeps normals next to a crease or jump unblended.
    """
    p = np.moveaxis(pts, axis, 0)
    v = np.moveaxis(valid, axis, 0)
    n = p.shape[0]
    diff = np.zeros_like(p)  # diff[i] = p[i+1] - p[i]
    dok = np.zeros(v.shape, dtype=bool)
    diff[:-1] = p[1:] - p[:-1]
    dok[:-1] = v[1:] & v[:-1]
    fwd, fok = diff, dok
    bwd = np.zeros_like(p)
    bok = np.zeros(v.shape, dtype=bool)
    bwd[1:], bok[1:] = diff[:-1], dok[:-1]
    inf = np.full(v.shape, np.inf)
    fcurv, bcurv = inf.copy(), inf.copy()
    if n >= 3:
        fcurv[:-2] = np.where(dok[1:-1] & dok[:-2], np.linalg.norm(diff[1:-1] - diff[:-2], axis=-1), np.inf)
        bcurv[2:] = np.where(dok[1:-1] & dok[:-2], np.linalg.norm(diff[1:-1] - diff[:-2], axis=-1), np.inf)
    use_b = bok & (~fok | (bcurv < fcurv))
    t = np.where(use_b[..., None], bwd, fwd)
    return np.moveaxis(t, 0, axis), np.moveaxis(fok | bok, 0, axis)


def compute_normals(depth: np.ndarray, intrinsics) -> NormalMap:
    depth = np.asarray(depth, dtype=np.float64)
    pts = backproject(depth, intrinsics)
    d = depth > 0
    tu, oku = _tangent(pts, d, axis=1)
    tv, okv = _tangent(pts, d, axis=0)
    n = np.cross(tu, tv)
    norm = np.linalg.norm(n, axis=-1)
    ok = d & oku & okv & (norm > 1e-12)
    n = n / np.where(norm > 0, norm, 1.0)[..., None]
    # face the camera: n . p < 0
    n[(n * pts).sum(-1) > 0] *= -1
    return NormalMap(np.where(ok[..., None], n, 0.0), ok, pts)


# (p slice, q slice, step length) for right, down, down-right and down-left neighbours
_NEIGHBOURS = (
    (np.s_[:, :-1], np.s_[:, 1:], 1.0),
    (np.s_[:-1, :], np.s_[1:, :], 1.0),
    (np.s_[:-1, :-1], np.s_[1:, 1:], np.sqrt(2.0)),
    (np.s_[:-1, 1:], np.s_[1:, :-1], np.sqrt(2.0)),
)


def convexity_edges(depth: np.ndarray, normals: NormalMap, angle_thresh_deg: float = 10.0) -> np.ndarray:
    """Pixels on concave creases, plus pixels with no usable normal.

    Diagonal pairs are tested too so that creases meeting at a corner leave no
    4-connected gap.
    """
    n, x, ok = normals.normals, normals.points, normals.valid
    cos_t = np.cos(np.deg2rad(angle_thresh_deg))
    edge = ~ok & (np.asarray(depth) > 0)
    for sp, sq, _ in _NEIGHBOURS:
        bend = ((n[sp] - n[sq]) * (x[sq] - x[sp])).sum(-1) > 0
        sharp = (n[sp] * n[sq]).sum(-1) < cos_t
        cut = bend & sharp & ok[sp] & ok[sq]
        edge[sp] |= cut
        edge[sq] |= cut
    return edge


def depth_discontinuity(depth: np.ndarray, intrinsics, rel_thresh: float = 0.05) -> np.ndarray:
    """Marks the farther pixel of each neighbour pair whose 3D gap exceeds rel_thresh * depth.

    The threshold scales with the pixel step, so diagonal pairs get sqrt(2) more room.
    """
    if rel_thresh <= 0:
        raise ValueError("rel_thresh must be positive")
    depth = np.asarray(depth, dtype=np.float64)
    pts = backproject(depth, intrinsics)
    edge = np.zeros(depth.shape, dtype=bool)
    for sp, sq, step in _NEIGHBOURS:
        zp, zq = depth[sp], depth[sq]
        both = (zp > 0) & (zq > 0)
        gap = np.linalg.norm(pts[sq] - pts[sp], axis=-1)
        cut = both & (gap > step * rel_thresh * np.minimum(zp, zq))
        edge[sp] |= cut & (zp >= zq)
        edge[sq] |= cut & (zq > zp)
    return edge


def segment(depth: np.ndarray, intrinsics, cfg: SegmentConfig | None = None,
            frame_index: int = 0) -> SegmentSet:
    cfg = cfg or SegmentConfig()
    cfg.validate()
    depth = np.asarray(depth, dtype=np.float64)
    normals = compute_normals(depth, intrinsics)
    edges = convexity_edges(depth, normals, cfg.angle_thresh)
    edges |= depth_discontinuity(depth, intrinsics, cfg.rel_thresh)
    keep = (depth > 0) & ~edges
    comp, n = ndimage.label(keep, structure=FOUR_CONNECTED)
    sizes = np.bincount(comp.ravel(), minlength=n + 1)
    big = np.flatnonzero(sizes >= cfg.min_pixels)
    big = big[big > 0]
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[big] = np.arange(1, len(big) + 1)
    labels = remap[comp]
    counts = {int(i + 1): int(sizes[b]) for i, b in enumerate(big)}
    return SegmentSet(labels, counts, frame_index)


def segment_stats(segs: SegmentSet, depth: np.ndarray | None = None) -> list[dict]:
    rows = []
    for sid in segs.ids:
        rr, cc = np.nonzero(segs.labels == sid)
        row = {"segment": sid, "pixels": segs.counts[sid],
               "row": float(rr.mean()), "col": float(cc.mean())}
        if depth is not None:
            row["mean_depth"] = float(np.asarray(depth)[rr, cc].mean())
        rows.append(row)
    return rows


def save_segments(path, segs: SegmentSet, depth: np.ndarray | None = None) -> None:
    """16-bit PGM label image plus a ``.txt`` sidecar of per-segment statistics."""
    path = Path(path)
    if segs.labels.max(initial=0) > 65535:
        raise ValueError("too many segments for a 16-bit label image")
    write_pgm16(path, segs.labels.astype(np.uint16))
    stats = segment_stats(segs, depth)
    cols = ["segment", "pixels", "row", "col"] + (["mean_depth"] if depth is not None else [])
    lines = [f"# frame {segs.frame_index}", ",".join(cols)]
    lines += [",".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols) for r in stats]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def load_segments(path) -> SegmentSet:
    from .imageio import read_pgm16

    path = Path(path)
    labels = read_pgm16(path).astype(np.int32)
    side = path.with_suffix(".txt")
    frame = 0
    if side.exists():
        first = side.read_text().splitlines()[0]
        if first.startswith("# frame"):
            frame = int(first.split()[-1])
    ids, counts = np.unique(labels[labels > 0], return_counts=True)
    return SegmentSet(labels, {int(i): int(c) for i, c in zip(ids, counts)}, frame)
