"""Sequence similarity graph, random-walk transition matrices and triplet mining.

Nodes are mask sequences. Edge weights combine a co-occurrence count over
global feature clusters (``w_plus``) with an aligned viewpoint distance
(``w_minus``)::

    w = max(lambda * w_plus - w_minus, 0)

Positive sequences are drawn from the H-step random-walk distribution and
negatives from its normalized complement.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .assignment import solve_assignment
from .clustering import kmeans
from .tracking import MaskSequence

__all__ = [
    "SimilarityGraph",
    "TransitionMatrix",
    "Triplet",
    "DISTANCE_METHODS",
    "compute_w_plus",
    "viewpoint_centroids",
    "compute_w_minus",
    "build_graph",
    "transition_matrix",
    "positive_distribution",
    "negative_distribution",
    "conf",
    "draw_sequence_triplets",
    "sample_triplets",
    "sequence_distance",
    "distance_matrix",
    "save_graph_csv",
    "load_graph_csv",
]

log = logging.getLogger(__name__)

DISTANCE_METHODS = ("viewpoint", "mean_feature", "top_ten_nn", "cut_ten")


@dataclass
class SimilarityGraph:
    w_plus: np.ndarray
    w_minus: np.ndarray
    lam: float
    w: np.ndarray
    sequences: List[MaskSequence] = field(default_factory=list, repr=False)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.w, 1) > 0))

    def binarized(self) -> "SimilarityGraph":
        """Same edge structure with every positive weight set to 1."""
        return replace(self, w=(self.w > 0).astype(float))


@dataclass
class TransitionMatrix:
    t: np.ndarray
    horizon: int
    t_h: np.ndarray


@dataclass(frozen=True)
class Triplet:
    """Observation triplet; each member is ``(sequence index, position in sequence)``."""

    anchor: Tuple[int, int]
    positive: Tuple[int, int]
    negative: Tuple[int, int]
    confidence: float


def _combine(w_plus, w_minus, lam):
    w = np.maximum(lam * w_plus - w_minus, 0.0)
    np.fill_diagonal(w, 0.0)
    return w


def compute_w_plus(sequences: Sequence[MaskSequence], k_global: int = 500, seed: int = 0) -> np.ndarray:
    """Pairs of observations from two sequences that share a global cluster."""
    n = len(sequences)
    owners = np.concatenate([np.full(len(s), i) for i, s in enumerate(sequences)])
    pooled = np.concatenate([s.features for s in sequences])
    k = min(k_global, pooled.shape[0])
    labels = kmeans(pooled, k, seed=seed).labels
    counts = np.zeros((n, k))
    np.add.at(counts, (owners, labels), 1.0)
    w_plus = counts @ counts.T
    np.fill_diagonal(w_plus, 0.0)
    return w_plus


def viewpoint_centroids(seq: MaskSequence, n_viewpoints: int = 5, seed: int = 0,
                        n_init: int = 5) -> np.ndarray:
    """Centroids of ``min(n_viewpoints, len(seq))`` clusters of the sequence's features.

    Several restarts keep short viewpoint visits from being merged away.
    """
    feats = seq.features
    k = min(n_viewpoints, feats.shape[0])
    return kmeans(feats, k, seed=seed, n_init=n_init).centroids


def _pairwise_l2(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _aligned_distance(ca, cb) -> float:
    return solve_assignment(_pairwise_l2(ca, cb)).objective


def compute_w_minus(a: MaskSequence, b: MaskSequence, n_viewpoints: int = 5, seed: int = 0,
                    use_viewpoints: bool = True) -> float:
    """Total L2 cost of the optimal alignment between two sequences.

    With ``use_viewpoints`` the alignment runs over viewpoint centroids,
    otherwise over the raw frame features.
    """
    if use_viewpoints:
        return _aligned_distance(viewpoint_centroids(a, n_viewpoints, seed),
                                 viewpoint_centroids(b, n_viewpoints, seed))
    return _aligned_distance(a.features, b.features)


def build_graph(sequences: Sequence[MaskSequence], lam: float = 0.1, k_global: int = 500,
                n_viewpoints: int = 5, seed: int = 0, use_viewpoints: bool = True) -> SimilarityGraph:
    sequences = list(sequences)
    n = len(sequences)
    if n < 2:
        raise ValueError(f"similarity graph needs at least 2 sequences, got {n}")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    w_plus = compute_w_plus(sequences, k_global, seed)
    if use_viewpoints:
        points = [viewpoint_centroids(s, n_viewpoints, seed) for s in sequences]
    else:
        points = [s.features for s in sequences]
    w_minus = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            w_minus[i, j] = w_minus[j, i] = _aligned_distance(points[i], points[j])
    return SimilarityGraph(w_plus=w_plus, w_minus=w_minus, lam=lam,
                           w=_combine(w_plus, w_minus, lam), sequences=sequences)


def transition_matrix(g: SimilarityGraph, horizon: int = 3) -> TransitionMatrix:
    """Row-normalized weights and their ``horizon``-th power.

    Isolated nodes walk uniformly to every other node.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    w = np.array(g.w, dtype=float)
    n = w.shape[0]
    sums = w.sum(axis=1)
    t = np.empty_like(w)
    live = sums > 0
    t[live] = w[live] / sums[live, None]
    if n > 1:
        t[~live] = 1.0 / (n - 1)
        t[np.flatnonzero(~live), np.flatnonzero(~live)] = 0.0
    else:
        t[:] = 1.0
    t_h = t.copy()
    for _ in range(horizon - 1):
        t_h = t @ t_h
    return TransitionMatrix(t=t, horizon=horizon, t_h=t_h)


def _normalized(p):
    total = p.sum()
    if total <= 0:
        return None
    return p / total


def positive_distribution(tm: TransitionMatrix, i: int) -> Optional[np.ndarray]:
    """Walk distribution from ``i`` with the anchor removed; None if no mass is left."""
    p = tm.t_h[i].copy()
    p[i] = 0.0
    return _normalized(p)


def negative_distribution(tm: TransitionMatrix, i: int) -> Optional[np.ndarray]:
    p = np.clip(1.0 - tm.t_h[i], 0.0, None)
    p[i] = 0.0
    return _normalized(p)


def conf(g: SimilarityGraph, s: int, s_pos: int, s_neg: int) -> float:
    """Confidence that ``s_pos`` shares the anchor's class and ``s_neg`` does not.

    Row extremes are taken over the other nodes. A flat row gives 1.
    """
    row = np.delete(g.w[s], s)
    lo, hi = row.min(), row.max()
    if hi - lo <= 0:
        return 1.0
    pos = (g.w[s, s_pos] - lo) / (hi - lo)
    neg = 1.0 - (g.w[s, s_neg] - lo) / (hi - lo)
    return float(min(max(min(pos, neg), 0.0), 1.0))


def draw_sequence_triplets(tm: TransitionMatrix, n_draws: int, rng: np.random.Generator):
    """Sequence-level draws with anchors cycled ``0, 1, ..., n-1, 0, ...``.

    Returns ``(anchors, positives, negatives, skipped)`` where skipped counts
    draws whose anchor had a degenerate distribution.
    """
    n = tm.t.shape[0]
    anchors = np.arange(n_draws) % n
    positives = np.full(n_draws, -1)
    negatives = np.full(n_draws, -1)
    for i in range(n):
        slots = np.flatnonzero(anchors == i)
        if not len(slots):
            continue
        p_pos = positive_distribution(tm, i)
        p_neg = negative_distribution(tm, i)
        if p_pos is None or p_neg is None:
            continue
        positives[slots] = rng.choice(n, size=len(slots), p=p_pos)
        negatives[slots] = rng.choice(n, size=len(slots), p=p_neg)
    keep = positives >= 0
    skipped = int(np.count_nonzero(~keep))
    return anchors[keep], positives[keep], negatives[keep], skipped


def sample_triplets(tm: TransitionMatrix, g: SimilarityGraph, n_triplets: int,
                    frames_per_pair: int = 4, rng_seed: int = 0,
                    constant_confidence: bool = False) -> Tuple[List[Triplet], int]:
    """Mine observation triplets by random walks over the graph.

    ``n_triplets`` sequence-level triplets are drawn; each yields
    ``frames_per_pair`` observation triplets. Returns the triplets and the
    number of skipped draws.
    """
    n = g.n
    if n < 3:
        raise ValueError(f"triplet sampling needs at least 3 sequences, got {n}")
    lengths = np.array([len(s) for s in g.sequences])
    if len(lengths) != n:
        raise ValueError("graph carries no sequences to sample frames from")
    rng = np.random.default_rng(rng_seed)
    anchors, positives, negatives, skipped = draw_sequence_triplets(tm, n_triplets, rng)
    if skipped:
        log.warning("skipped %d triplet draws with degenerate distributions", skipped)
    triplets = []
    for a, p, q in zip(anchors.tolist(), positives.tolist(), negatives.tolist()):
        c = 1.0 if constant_confidence else conf(g, a, p, q)
        fa = rng.integers(lengths[a], size=frames_per_pair)
        fp = rng.integers(lengths[p], size=frames_per_pair)
        fn = rng.integers(lengths[q], size=frames_per_pair)
        for x, y, z in zip(fa.tolist(), fp.tolist(), fn.tolist()):
            triplets.append(Triplet((a, x), (p, y), (q, z), c))
    return triplets, skipped


# -- sequence distances used by the ablation sweep ---------------------------

def _mean_feature(a_feats, b_feats):
    return float(np.linalg.norm(a_feats.mean(axis=0) - b_feats.mean(axis=0)))


def _top_nn(ca, cb, top):
    # nearest counterpart of every centroid on either side, no one-to-one constraint
    d = _pairwise_l2(ca, cb)
    nearest = np.sort(np.concatenate([d.min(axis=1), d.min(axis=0)]))
    return float(nearest[:top].mean())


def _cut(a_feats, b_feats, n_parts):
    parts = min(n_parts, len(a_feats), len(b_feats))
    ma = np.stack([p.mean(axis=0) for p in np.array_split(a_feats, parts)])
    mb = np.stack([p.mean(axis=0) for p in np.array_split(b_feats, parts)])
    return float(np.linalg.norm(ma - mb, axis=1).mean())


def sequence_distance(a: MaskSequence, b: MaskSequence, method: str = "viewpoint",
                      n_viewpoints: int = 5, seed: int = 0, top: int = 10, n_parts: int = 10) -> float:
    if method == "viewpoint":
        return compute_w_minus(a, b, n_viewpoints, seed)
    if method == "mean_feature":
        return _mean_feature(a.features, b.features)
    if method == "top_ten_nn":
        return _top_nn(viewpoint_centroids(a, n_viewpoints, seed),
                       viewpoint_centroids(b, n_viewpoints, seed), top)
    if method == "cut_ten":
        return _cut(a.features, b.features, n_parts)
    raise ValueError(f"unknown distance method {method!r}; expected one of {DISTANCE_METHODS}")


def distance_matrix(sequences: Sequence[MaskSequence], method: str, n_viewpoints: int = 5,
                    seed: int = 0, top: int = 10, n_parts: int = 10) -> np.ndarray:
    """Symmetric matrix of ``sequence_distance`` with per-sequence work cached."""
    n = len(sequences)
    if method in ("viewpoint", "top_ten_nn"):
        cache = [viewpoint_centroids(s, n_viewpoints, seed) for s in sequences]
    else:
        cache = [s.features for s in sequences]
    pair = {
        "viewpoint": _aligned_distance,
        "top_ten_nn": lambda x, y: _top_nn(x, y, top),
        "mean_feature": _mean_feature,
        "cut_ten": lambda x, y: _cut(x, y, n_parts),
    }.get(method)
    if pair is None:
        raise ValueError(f"unknown distance method {method!r}; expected one of {DISTANCE_METHODS}")
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = pair(cache[i], cache[j])
    return d


# -- graph CSV ----------------------------------------------------------------

def save_graph_csv(g: SimilarityGraph, path) -> None:
    """One row per unordered pair with positive weight, 17 significant digits."""
    lines = [f"# nodes={g.n} lambda={g.lam!r}", "i,j,w_plus,w_minus,w"]
    for i in range(g.n):
        for j in range(i + 1, g.n):
            if g.w[i, j] > 0:
                lines.append(f"{i},{j},{g.w_plus[i, j]:.17g},{g.w_minus[i, j]:.17g},{g.w[i, j]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_graph_csv(path, sequences: Optional[Sequence[MaskSequence]] = None) -> SimilarityGraph:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    n = lam = None
    header_seen = False
    rows = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            fields = dict(tok.split("=", 1) for tok in line[1:].split() if "=" in tok)
            if "nodes" in fields:
                n = int(fields["nodes"])
            if "lambda" in fields:
                lam = float(fields["lambda"])
            continue
        if not header_seen:
            if line.strip() != "i,j,w_plus,w_minus,w":
                raise ValueError(f"{path}:{lineno}: expected header 'i,j,w_plus,w_minus,w'")
            header_seen = True
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        rows.append((int(parts[0]), int(parts[1]), *map(float, parts[2:])))
    if n is None or lam is None:
        raise ValueError(f"{path}: missing '# nodes=<n> lambda=<lambda>' line")
    w_plus, w_minus, w = (np.zeros((n, n)) for _ in range(3))
    for i, j, wp, wm, ww in rows:
        if not (0 <= i < n and 0 <= j < n) or i == j or not math.isfinite(ww):
            raise ValueError(f"{path}: invalid edge ({i}, {j})")
        w_plus[i, j] = w_plus[j, i] = wp
        w_minus[i, j] = w_minus[j, i] = wm
        w[i, j] = w[j, i] = ww
    return SimilarityGraph(w_plus=w_plus, w_minus=w_minus, lam=lam, w=w,
                           sequences=list(sequences) if sequences is not None else [])
