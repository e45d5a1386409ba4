"""Cosine-similarity graph over segment features, partitioned by Markov clustering."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geomseg import SegmentSet

log = logging.getLogger(__name__)


@dataclass
class ClusterConfig:
    expansion: int = 2
    inflation: float = 12.0
    prune: float = 1e-4
    tau_edge: float = 0.5
    self_loop: float = 1.0
    tol: float = 1e-6
    max_iter: int = 100
    known_conf_thresh: float = 0.6
    entropy_thresh: float = 0.6

    def validate(self) -> None:
        if self.expansion < 2 or int(self.expansion) != self.expansion:
            raise ValueError("expansion must be an integer >= 2")
        if self.inflation <= 1:
            raise ValueError("inflation must exceed 1")
        if not 0 <= self.tau_edge < 1:
            raise ValueError("tau_edge must be in [0, 1)")
        if self.prune < 0 or self.tol <= 0 or self.max_iter < 1:
            raise ValueError("prune must be >= 0, tol > 0 and max_iter >= 1")
        if not 0 < self.known_conf_thresh <= 1 or self.entropy_thresh < 0:
            raise ValueError("known_conf_thresh must be in (0, 1] and entropy_thresh >= 0")


def cosine_similarity(h_m, h_n) -> float:
    a = np.asarray(h_m, dtype=np.float64)
    b = np.asarray(h_n, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_matrix(features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero feature vector at node {int(np.flatnonzero(norms == 0)[0])}")
    u = x / norms[:, None]
    return np.clip(u @ u.T, -1.0, 1.0)


def column_normalize(a: np.ndarray) -> np.ndarray:
    s = a.sum(axis=0, keepdims=True)
    return a / np.where(s > 0, s, 1.0)


@dataclass
class SimilarityGraph:
    matrix: np.ndarray  # (N, N) column-stochastic flow matrix
    nodes: list = field(default_factory=list)  # node index -> segment key
    self_loop: float = 1.0
    similarity: np.ndarray | None = None  # clamped, thresholded, before self-loops

    def __len__(self) -> int:
        return self.matrix.shape[0]


def build_similarity_graph(features, tau_edge: float = 0.5, self_loop: float = 1.0,
                           nodes: list | None = None) -> SimilarityGraph:
    """Clamp negatives to 0, drop edges below tau_edge, add self-loops, normalize columns."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("need at least one feature vector")
    if not 0 <= tau_edge < 1:
        raise ValueError("tau_edge must be in [0, 1)")
    sim = np.maximum(cosine_matrix(x), 0.0)
    sim[sim < tau_edge] = 0.0
    np.fill_diagonal(sim, 0.0)
    a = sim.copy()
    np.fill_diagonal(a, self_loop)
    return SimilarityGraph(column_normalize(a), list(nodes) if nodes is not None else list(range(len(x))),
                           self_loop, sim)


@dataclass
class MCLResult:
    labels: np.ndarray  # (N,) cluster index per node, 0-based, ordered by first member
    converged: bool
    iterations: int
    matrix: np.ndarray

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def _check_stochastic(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("flow matrix must be square")
    if np.any(m < 0) or np.abs(m.sum(axis=0) - 1.0).max() > 1e-9:
        raise ValueError("flow matrix is not column-stochastic")


def interpret_attractors(m: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Nodes with positive diagonal mass claim the columns they hold mass in.

    Attractors holding mass on each other form one attractor system. A node
    claimed by several systems goes to the one with larger mass, then the one
    with the lower node index. Unclaimed nodes form singletons.
    """
    from scipy.sparse.csgraph import connected_components

    n = m.shape[0]
    attractors = np.flatnonzero(np.diag(m) > 0)
    owner = np.full(n, -1)
    if len(attractors):
        link = m[np.ix_(attractors, attractors)] > 0
        _, sys_of = connected_components(link | link.T, directed=False)
        n_sys = sys_of.max() + 1
        rep = np.array([attractors[sys_of == s].min() for s in range(n_sys)])
        mass = np.zeros((n_sys, n))
        np.add.at(mass, sys_of, m[attractors])
        # ties within rtol go to the system with the lowest representative
        order = np.argsort(rep)
        mass, rep = mass[order], rep[order]
        top = mass.max(axis=0)
        best = np.argmax(mass >= top * (1 - rtol), axis=0)
        has = top > 0
        owner[has] = rep[best[has]]
    owner[owner < 0] = np.flatnonzero(owner < 0)
    # relabel 0..K-1 in order of first appearance
    _, first, inv = np.unique(owner, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inv]


def mcl(graph, expansion: int = 2, inflation: float = 12.0, prune: float = 1e-4,
        max_iter: int = 100, tol: float = 1e-6) -> MCLResult:
    m = np.array(graph.matrix if isinstance(graph, SimilarityGraph) else graph, dtype=np.float64)
    _check_stochastic(m)
    if expansion < 2 or inflation <= 1:
        raise ValueError("need expansion >= 2 and inflation > 1")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        nxt = np.linalg.matrix_power(m, int(expansion))
        keep = nxt.max(axis=0, keepdims=True)
        nxt[(nxt < prune) & (nxt < keep)] = 0.0
        nxt = column_normalize(nxt ** inflation)
        delta = np.abs(nxt - m).max()
        m = nxt
        if delta < tol:
            converged = True
            break
    if not converged:
        log.warning("MCL did not converge in %d iterations; returning best-effort partition", max_iter)
    return MCLResult(interpret_attractors(m), converged, it, m)


@dataclass
class ClusterTag:
    kind: str  # "known" or "novel"
    index: int  # class id for known, running novel id otherwise

    def __str__(self) -> str:
        return f"{self.kind}({self.index})"


@dataclass
class ClusterResult:
    nodes: list  # segment keys, e.g. (frame, segment)
    labels: np.ndarray  # cluster id per node, 1-based
    tags: dict[int, ClusterTag]
    means: dict[int, np.ndarray]
    converged: bool = True

    def partition(self, frame: int | None = None) -> dict:
        """Segment key -> cluster id; with ``frame`` given, keys are bare segment ids."""
        if frame is None:
            return {k: int(c) for k, c in zip(self.nodes, self.labels)}
        return {k[1]: int(c) for k, c in zip(self.nodes, self.labels) if k[0] == frame}


def assign_labels(partition: dict[int, int], segments: SegmentSet) -> np.ndarray:
    """Per-pixel cluster ids; unsegmented pixels stay 0."""
    missing = [s for s in segments.ids if s not in partition]
    if missing:
        raise ValueError(f"segment {missing[0]} has no cluster")
    lut = np.zeros(int(segments.labels.max(initial=0)) + 1, dtype=np.int32)
    for sid in segments.ids:
        lut[sid] = partition[sid]
    return lut[segments.labels]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def identify_novel(labels: np.ndarray, features: np.ndarray, pixels: np.ndarray,
                   known_conf_thresh: float = 0.6, entropy_thresh: float = 0.6,
                   slot_classes: list[int] | None = None, has_entropy: bool = True,
                   has_embedding: bool = True) -> tuple[dict[int, ClusterTag], dict[int, np.ndarray]]:
    """Tag each cluster known(class) or novel(k) from its pixel-weighted mean feature.

    Known needs a confident softmax peak and low entropy; novel ids are handed
    out by descending cluster size, then cluster id.
    """
    features = np.asarray(features, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    means, sizes, tags = {}, {}, {}
    for c in np.unique(labels):
        m = labels == c
        means[int(c)] = (features[m] * pixels[m, None]).sum(0) / pixels[m].sum()
        sizes[int(c)] = pixels[m].sum()
    novel = []
    for c, h in means.items():
        emb = h[:-1] if has_entropy else h
        known = has_embedding and emb.size >= 2
        if known:
            p = _softmax(emb)
            slot = int(p.argmax())
            known = p[slot] >= known_conf_thresh
            if has_entropy:
                known = known and h[-1] <= entropy_thresh
        if known:
            tags[c] = ClusterTag("known", slot_classes[slot] if slot_classes else slot)
        else:
            novel.append(c)
    for k, c in enumerate(sorted(novel, key=lambda c: (-sizes[c], c))):
        tags[c] = ClusterTag("novel", k)
    return tags, means


def cluster_segments(features: np.ndarray, nodes: list, pixels: np.ndarray,
                     cfg: ClusterConfig | None = None, slot_classes: list[int] | None = None,
                     has_entropy: bool = True, has_embedding: bool = True) -> ClusterResult:
    """Joint clustering of all segments passed in. ``features=None`` keeps every segment apart."""
    cfg = cfg or ClusterConfig()
    cfg.validate()
    n = len(nodes)
    if features is None:
        labels = np.arange(n)
        converged = True
        feats = np.zeros((n, 1))
    else:
        g = build_similarity_graph(features, cfg.tau_edge, cfg.self_loop, nodes)
        res = mcl(g, cfg.expansion, cfg.inflation, cfg.prune, cfg.max_iter, cfg.tol)
        labels, converged, feats = res.labels, res.converged, features
    labels = labels + 1
    if features is None:
        tags = {int(c): ClusterTag("novel", i) for i, c in enumerate(labels)}
        means = {int(c): np.zeros(0) for c in labels}
    else:
        tags, means = identify_novel(labels, feats, pixels, cfg.known_conf_thresh, cfg.entropy_thresh,
                                     slot_classes, has_entropy, has_embedding)
    return ClusterResult(list(nodes), labels, tags, means, converged)


def save_partition(path, result: ClusterResult) -> None:
    lines = ["frame,segment,cluster,tag"]
    for (frame, seg), c in zip(result.nodes, result.labels):
        lines.append(f"{frame},{seg},{c},{result.tags[int(c)]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_partition(path) -> dict[tuple[int, int], tuple[int, str]]:
    out = {}
    for row in Path(path).read_text().splitlines()[1:]:
        f, s, c, t = row.split(",")
        out[(int(f), int(s))] = (int(c), t)
    return out


def palette(n: int, seed: int = 0) -> np.ndarray:
    """Distinct-ish RGB colors for label ids 0..n-1; id 0 is black."""
    rng = np.random.default_rng(seed)
    pal = rng.integers(40, 256, size=(max(n, 1), 3)).astype(np.uint8)
    pal[0] = 0
    return pal


def save_label_map(path, labels: np.ndarray, n_colors: int | None = None) -> None:
    """16-bit PGM of ids plus a ``.palette.txt`` sidecar mapping id to RGB."""
    from .imageio import write_pgm16

    path = Path(path)
    write_pgm16(path, labels.astype(np.uint16))
    pal = palette(n_colors or int(labels.max(initial=0)) + 1)
    path.with_suffix(".palette.txt").write_text(
        "\n".join(f"{i} {r} {g} {b}" for i, (r, g, b) in enumerate(pal)) + "\n")
