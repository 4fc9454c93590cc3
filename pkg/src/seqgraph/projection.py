"""Two-layer projection network trained with a confidence-weighted triplet loss.

Pure numpy, float64, hand-written backpropagation. The loss on a triplet of
projected features is::

    max(||g_a - g_p|| - ||g_a - g_n|| + alpha * confidence, 0)

with unsquared Euclidean distances.
"""

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

__all__ = [
    "ProjectionNetwork",
    "TrainConfig",
    "init_network",
    "forward",
    "soft_triplet_loss",
    "loss_gradients",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
]

CHECKPOINT_MAGIC = "seqgraph-net"
CHECKPOINT_VERSION = "v1"
PARAM_NAMES = ("w1", "b1", "w2", "b2")


@dataclass
class ProjectionNetwork:
    w1: np.ndarray  # d_in x hidden
    b1: np.ndarray
    w2: np.ndarray  # hidden x out
    b2: np.ndarray

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.w1.shape[1], self.w2.shape[1]

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ProjectionNetwork":
        return ProjectionNetwork(*(getattr(self, name).copy() for name in PARAM_NAMES))


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    margin_alpha: float = 10.0
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.margin_alpha < 0:
            raise ValueError("margin_alpha must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def init_network(d_in: int, hidden: int = 512, out: int = 128, seed: int = 0) -> ProjectionNetwork:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d_in + hidden))
    lim2 = np.sqrt(6.0 / (hidden + out))
    return ProjectionNetwork(
        w1=rng.uniform(-lim1, lim1, size=(d_in, hidden)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-lim2, lim2, size=(hidden, out)),
        b2=np.zeros(out),
    )


def _check_input(net, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.d_in:
        raise ValueError(f"input dimension {x.shape[-1]} does not match network d_in={net.d_in}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def forward(net: ProjectionNetwork, phi) -> np.ndarray:
    """Project one feature vector or a batch of row vectors."""
    x = _check_input(net, phi)
    return np.maximum(x @ net.w1 + net.b1, 0.0) @ net.w2 + net.b2


def soft_triplet_loss(g_a, g_p, g_n, confidence, alpha: float = 10.0):
    d_pos = np.linalg.norm(np.asarray(g_a) - np.asarray(g_p), axis=-1)
    d_neg = np.linalg.norm(np.asarray(g_a) - np.asarray(g_n), axis=-1)
    return np.maximum(d_pos - d_neg + alpha * np.asarray(confidence, dtype=float), 0.0)


def _unit(diff, dist):
    # zero-distance rows get a zero subgradient
    out = np.zeros_like(diff)
    nz = dist > 0
    out[nz] = diff[nz] / dist[nz, None]
    return out


def loss_gradients(net: ProjectionNetwork, x_a, x_p, x_n, confidence, alpha: float = 10.0):
    """Mean soft triplet loss over a batch and its exact parameter gradients.

    Inputs may be single vectors or batches of rows. Returns
    ``(per_triplet_losses, grads)`` where ``grads`` maps parameter names to
    arrays shaped like the parameters.
    """
    x_a, x_p, x_n = (np.atleast_2d(_check_input(net, x)) for x in (x_a, x_p, x_n))
    b = x_a.shape[0]
    conf = np.broadcast_to(np.asarray(confidence, dtype=float), (b,))
    x = np.concatenate([x_a, x_p, x_n])
    pre = x @ net.w1 + net.b1
    hid = np.maximum(pre, 0.0)
    out = hid @ net.w2 + net.b2
    g_a, g_p, g_n = out[:b], out[b : 2 * b], out[2 * b :]

    diff_p, diff_n = g_a - g_p, g_a - g_n
    d_p = np.sqrt(np.einsum("ij,ij->i", diff_p, diff_p))
    d_n = np.sqrt(np.einsum("ij,ij->i", diff_n, diff_n))
    margin = d_p - d_n + alpha * conf
    losses = np.maximum(margin, 0.0)

    active = (margin > 0).astype(float)[:, None] / b
    u_p = _unit(diff_p, d_p) * active
    u_n = _unit(diff_n, d_n) * active
    d_out = np.concatenate([u_p - u_n, -u_p, u_n])

    d_hid = d_out @ net.w2.T
    d_pre = d_hid * (pre > 0)
    grads = {
        "w1": x.T @ d_pre,
        "b1": d_pre.sum(axis=0),
        "w2": hid.T @ d_out,
        "b2": d_out.sum(axis=0),
    }
    return losses, grads


def train(net: ProjectionNetwork, features, triplets, confidences, cfg: TrainConfig):
    """Plain minibatch SGD over triplets of row indices into ``features``.

    ``triplets`` is an (m, 3) integer array of (anchor, positive, negative)
    rows. Returns the trained copy of ``net`` and the per-epoch mean loss.
    """
    feats = np.asarray(features, dtype=float)
    idx = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    conf = np.asarray(confidences, dtype=float)
    if len(idx) == 0:
        raise ValueError("training needs at least one triplet")
    if len(conf) != len(idx):
        raise ValueError("one confidence value per triplet is required")

    net = net.copy()
    rng = np.random.default_rng(cfg.seed)
    history: List[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(idx))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            rows = idx[batch]
            losses, grads = loss_gradients(net, feats[rows[:, 0]], feats[rows[:, 1]], feats[rows[:, 2]],
                                           conf[batch], cfg.margin_alpha)
            if not np.all(np.isfinite(losses)):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}")
            total += float(losses.sum())
            if cfg.learning_rate:
                for name, g in grads.items():
                    getattr(net, name)[...] -= cfg.learning_rate * g
        history.append(total / len(idx))
    return net, history


def save_checkpoint(net: ProjectionNetwork, path) -> None:
    hidden, out = net.dims
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}, d_in={net.d_in}, dims={hidden},{out}"]
    for w, bias in ((net.w1, net.b1), (net.w2, net.b2)):
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in w)
        lines.append(" ".join(f"{v:.17g}" for v in bias))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_HEADER = re.compile(r"^(\S+) (v\d+), d_in=(\d+), dims=(\d+),(\d+)\s*$")


def load_checkpoint(path) -> ProjectionNetwork:
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text:
        raise ValueError(f"{path}: empty checkpoint")
    m = _HEADER.match(text[0])
    if not m or m.group(1) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    if m.group(2) != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {m.group(2)}, expected {CHECKPOINT_VERSION}")
    d_in, hidden, out = (int(m.group(g)) for g in (3, 4, 5))
    values = np.array([float(tok) for line in text[1:] for tok in line.split()])
    shapes = [(d_in, hidden), (hidden,), (hidden, out), (out,)]
    expected = sum(int(np.prod(s)) for s in shapes)
    if values.size != expected:
        raise ValueError(f"{path}: expected {expected} parameter values, found {values.size}")
    params, offset = [], 0
    for s in shapes:
        size = int(np.prod(s))
        params.append(values[offset : offset + size].reshape(s))
        offset += size
    return ProjectionNetwork(*params)
