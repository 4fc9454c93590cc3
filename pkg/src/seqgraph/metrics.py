"""Clustering agreement scores and thresholded pair-matching quality."""

from dataclasses import dataclass

import numpy as np

from .assignment import solve_assignment

__all__ = [
    "PairEvalResult",
    "contingency",
    "cluster_accuracy",
    "adjusted_rand_index",
    "nmi",
    "f_beta",
    "pairwise_matching_eval",
    "best_threshold_eval",
]


@dataclass(frozen=True)
class PairEvalResult:
    precision: float
    recall: float
    f_beta: float
    threshold: float


def _labels(predicted, truth):
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("predicted and truth must be 1-D and of equal length")
    if p.size == 0:
        raise ValueError("empty partition")
    return p, t


def contingency(predicted, truth) -> np.ndarray:
    """Counts of (predicted cluster, true class) co-memberships."""
    p, t = _labels(predicted, truth)
    _, pi = np.unique(p, return_inverse=True)
    _, ti = np.unique(t, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def cluster_accuracy(predicted, truth) -> float:
    """Fraction of points correctly labeled under the best cluster-to-class mapping."""
    table = contingency(predicted, truth)
    best = solve_assignment(table, sense="maximize").objective
    return float(best / table.sum())


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1) / 2.0


def adjusted_rand_index(predicted, truth) -> float:
    table = contingency(predicted, truth)
    n = table.sum()
    index = _comb2(table).sum()
    rows = _comb2(table.sum(axis=1)).sum()
    cols = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = rows * cols / total if total > 0 else 0.0
    max_index = (rows + cols) / 2.0
    if max_index - expected == 0:
        return 0.0
    return float((index - expected) / (max_index - expected))


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(predicted, truth) -> float:
    """Mutual information over the geometric mean of the two entropies (nats)."""
    table = contingency(predicted, truth).astype(float)
    n = table.sum()
    h_p = _entropy(table.sum(axis=1))
    h_t = _entropy(table.sum(axis=0))
    if h_p == 0 or h_t == 0:
        return 0.0
    pij = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / n**2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(min(max(mi / np.sqrt(h_p * h_t), 0.0), 1.0))


def f_beta(precision: float, recall: float, beta: float = 0.5) -> float:
    b2 = beta * beta
    denom = b2 * precision + recall
    if denom == 0:
        return 0.0
    # grouped so that equal precision and recall give back that value bit-for-bit when beta**2 is exact
    return recall * ((1 + b2) * precision / denom)


def _pair_view(distances, labels):
    d = np.asarray(distances, dtype=float)
    y = np.asarray(labels)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] != len(y):
        raise ValueError("distances must be square with one label per sequence")
    if not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite")
    iu = np.triu_indices(len(y), 1)
    return d[iu], (y[:, None] == y[None, :])[iu]


def _score(pair_d, same, threshold, beta):
    pred = pair_d < threshold
    tp = int(np.count_nonzero(pred & same))
    n_pred = int(np.count_nonzero(pred))
    n_true = int(np.count_nonzero(same))
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_true if n_true else 0.0
    return PairEvalResult(precision, recall, f_beta(precision, recall, beta), float(threshold))


def pairwise_matching_eval(distances, labels, threshold: float, beta: float = 0.5) -> PairEvalResult:
    """Predict a match for every unordered pair closer than ``threshold``."""
    pair_d, same = _pair_view(distances, labels)
    return _score(pair_d, same, threshold, beta)


def best_threshold_eval(distances, labels, beta: float = 0.5) -> PairEvalResult:
    """Sweep every distinct cut point and keep the best f-score (smallest threshold on ties)."""
    pair_d, same = _pair_view(distances, labels)
    best = None
    for d in np.unique(pair_d):
        res = _score(pair_d, same, np.nextafter(d, np.inf), beta)
        if best is None or res.f_beta > best.f_beta:
            best = res
    if best is None:
        best = PairEvalResult(0.0, 0.0, 0.0, 0.0)
    return best
