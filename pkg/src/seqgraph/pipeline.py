"""Stage-by-stage orchestration: track, graph, sample, train, cluster, evaluate.

Each stage draws randomness from its own stream derived from ``config.seed``,
so running the stages one at a time with persisted intermediates gives the
same result as a single-shot run.
"""

import csv
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import metrics
from .clustering import kmeans
from .data import Dataset, InputError
from .projection import TrainConfig, forward, init_network, load_checkpoint, save_checkpoint, train
from .simgraph import (
    DISTANCE_METHODS,
    SimilarityGraph,
    _combine,
    build_graph,
    compute_w_plus,
    distance_matrix,
    load_graph_csv,
    sample_triplets,
    save_graph_csv,
    transition_matrix,
)
from .tracking import MaskSequence, build_sequences

__all__ = [
    "PipelineConfig",
    "RunReport",
    "PipelineState",
    "StageError",
    "run_pipeline",
    "stage_track",
    "stage_graph",
    "stage_sample",
    "stage_train",
    "stage_cluster",
    "stage_evaluate",
    "ablation_table",
    "save_state",
    "load_state",
]

log = logging.getLogger(__name__)

REPORT_VERSION = 1

# fixed offsets that separate the random streams of the stages
_STREAMS = {"graph": 1, "sample": 2, "init": 3, "train": 4, "cluster": 5, "baseline": 6, "ablate": 7}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.state = None


@dataclass
class PipelineConfig:
    lam: float = 0.1
    horizon: int = 3
    k_global: int = 500
    n_viewpoints: int = 5
    K: int = 10
    iou_min: float = 0.1
    n_triplets: int = 2000
    frames_per_pair: int = 4
    learning_rate: float = 0.01
    margin_alpha: float = 10.0
    epochs: int = 100
    batch_size: int = 32
    hidden_dim: int = 512
    out_dim: int = 128
    final_n_init: int = 10
    seed: int = 0
    binary_graph: bool = False
    constant_margin: bool = False
    distance_method: str = "viewpoint"
    normalize_projection: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise InputError("lam must be positive")
        if self.horizon < 1:
            raise InputError("horizon must be >= 1")
        if self.K < 2:
            raise InputError("K must be >= 2")
        if self.k_global < 1 or self.n_viewpoints < 1:
            raise InputError("k_global and n_viewpoints must be >= 1")
        if not 0 <= self.iou_min <= 1:
            raise InputError("iou_min must lie in [0, 1]")
        if self.n_triplets < 1 or self.frames_per_pair < 1:
            raise InputError("n_triplets and frames_per_pair must be >= 1")
        if self.distance_method not in DISTANCE_METHODS + ("raw",):
            raise InputError(f"distance_method must be one of {DISTANCE_METHODS + ('raw',)}")
        if self.final_n_init < 1:
            raise InputError("final_n_init must be >= 1")
        try:
            self.train_config()
        except ValueError as exc:
            raise InputError(str(exc)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, margin_alpha=self.margin_alpha,
                           epochs=self.epochs, batch_size=self.batch_size, seed=self.stream("train"))

    def stream(self, stage: str) -> int:
        return int(np.random.SeedSequence([self.seed, _STREAMS[stage]]).generate_state(1)[0])

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise InputError(f"missing config file: {path}")
        try:
            return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from None


@dataclass
class RunReport:
    n_observations: int = 0
    n_sequences: int = 0
    graph_edges: int = 0
    n_triplets: int = 0
    skipped_anchors: int = 0
    confidence_constant: bool = False
    confidence_mean: float = 0.0
    loss_history: List[float] = field(default_factory=list)
    metrics: Optional[Dict[str, float]] = None
    f_beta_table: Optional[Dict[str, Dict[str, float]]] = None
    note: str = ""
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Deterministic content; wall-clock timings are kept out."""
        d = asdict(self)
        d.pop("timings")
        return {"version": REPORT_VERSION, **d}


@dataclass
class PipelineState:
    dataset: Dataset
    sequences: Optional[List[MaskSequence]] = None
    graph: Optional[SimilarityGraph] = None
    triplets: Optional[np.ndarray] = None  # (m, 3) observation indices
    triplet_sequences: Optional[np.ndarray] = None  # (m, 3) sequence indices
    confidences: Optional[np.ndarray] = None
    skipped: int = 0
    net: object = None
    loss_history: Optional[List[float]] = None
    labels: Optional[np.ndarray] = None
    raw_labels: Optional[np.ndarray] = None


@contextmanager
def _stage(name: str, timings: Dict[str, float]):
    start = time.perf_counter()
    try:
        yield
    except (InputError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - start


def stage_track(cfg: PipelineConfig, ds: Dataset) -> List[MaskSequence]:
    if ds.sequences is not None:
        return list(ds.sequences)
    out = []
    for vid, frames in ds.videos.items():
        out.extend(build_sequences(frames, cfg.iou_min, prefix=f"{vid}/"))
    return out


def stage_graph(cfg: PipelineConfig, sequences: List[MaskSequence]) -> SimilarityGraph:
    seed = cfg.stream("graph")
    if cfg.distance_method == "viewpoint":
        return build_graph(sequences, cfg.lam, cfg.k_global, cfg.n_viewpoints, seed)
    if cfg.distance_method == "raw":
        return build_graph(sequences, cfg.lam, cfg.k_global, cfg.n_viewpoints, seed, use_viewpoints=False)
    if len(sequences) < 2:
        raise ValueError(f"similarity graph needs at least 2 sequences, got {len(sequences)}")
    w_plus = compute_w_plus(sequences, cfg.k_global, seed)
    w_minus = distance_matrix(sequences, cfg.distance_method, cfg.n_viewpoints, seed)
    return SimilarityGraph(w_plus=w_plus, w_minus=w_minus, lam=cfg.lam,
                           w=_combine(w_plus, w_minus, cfg.lam), sequences=list(sequences))


def stage_sample(cfg: PipelineConfig, ds: Dataset, graph: SimilarityGraph):
    """Returns (observation index triplets, sequence index triplets, confidences, skipped)."""
    g = graph.binarized() if cfg.binary_graph else graph
    tm = transition_matrix(g, cfg.horizon)
    constant = cfg.binary_graph or cfg.constant_margin
    triplets, skipped = sample_triplets(tm, g, cfg.n_triplets, cfg.frames_per_pair,
                                        cfg.stream("sample"), constant_confidence=constant)
    if not triplets:
        raise ValueError("no triplets could be sampled from the graph")
    seqs = graph.sequences
    idx = np.array([[ds.index_of(seqs[s].observations[p].obs_id) for s, p in (t.anchor, t.positive, t.negative)]
                    for t in triplets], dtype=np.int64)
    seq_idx = np.array([[t.anchor[0], t.positive[0], t.negative[0]] for t in triplets], dtype=np.int64)
    conf = np.array([t.confidence for t in triplets])
    return idx, seq_idx, conf, skipped


def stage_train(cfg: PipelineConfig, ds: Dataset, triplets, confidences):
    net = init_network(ds.feature_dim, cfg.hidden_dim, cfg.out_dim, seed=cfg.stream("init"))
    return train(net, ds.features, triplets, confidences, cfg.train_config())


def project(cfg: PipelineConfig, net, features) -> np.ndarray:
    g = forward(net, features)
    if cfg.normalize_projection:
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        g = g / np.where(norms > 0, norms, 1.0)
    return g


def stage_cluster(cfg: PipelineConfig, ds: Dataset, net):
    """K-way labels on projected features, plus the raw-feature baseline labels."""
    feats = ds.features
    if cfg.K > len(feats):
        raise ValueError(f"K={cfg.K} exceeds the number of observations ({len(feats)})")
    labels = kmeans(project(cfg, net, feats), cfg.K, seed=cfg.stream("cluster"), n_init=cfg.final_n_init).labels
    raw = kmeans(feats, cfg.K, seed=cfg.stream("baseline"), n_init=cfg.final_n_init).labels
    return labels, raw


def sequence_truth(sequences: List[MaskSequence]) -> np.ndarray:
    """Majority class of each sequence (smallest id on ties)."""
    out = []
    for s in sequences:
        vals, counts = np.unique([o.truth_label for o in s.observations], return_counts=True)
        out.append(int(vals[np.argmax(counts)]))
    return np.array(out)


def ablation_table(cfg: PipelineConfig, sequences: List[MaskSequence]) -> Dict[str, Dict[str, float]]:
    """Best-threshold f_0.5 of matching sequence pairs, per distance method."""
    truth = sequence_truth(sequences)
    seed = cfg.stream("ablate")
    table = {}
    for method in DISTANCE_METHODS:
        d = distance_matrix(sequences, method, cfg.n_viewpoints, seed)
        res = metrics.best_threshold_eval(d, truth, beta=0.5)
        table[method] = {"precision": res.precision, "recall": res.recall,
                         "f_beta": res.f_beta, "threshold": res.threshold}
    return table


def stage_evaluate(cfg: PipelineConfig, state: PipelineState, timings=None) -> RunReport:
    ds = state.dataset
    rep = RunReport(
        n_observations=len(ds.observations()),
        n_sequences=len(state.sequences),
        graph_edges=state.graph.edge_count,
        n_triplets=len(state.triplets),
        skipped_anchors=state.skipped,
        confidence_constant=cfg.binary_graph or cfg.constant_margin,
        confidence_mean=float(np.mean(state.confidences)),
        loss_history=[float(v) for v in state.loss_history],
        timings=dict(timings or {}),
    )
    if ds.has_truth:
        truth = ds.truth_labels()
        rep.metrics = {
            "acc": metrics.cluster_accuracy(state.labels, truth),
            "ari": metrics.adjusted_rand_index(state.labels, truth),
            "nmi": metrics.nmi(state.labels, truth),
            "raw_acc": metrics.cluster_accuracy(state.raw_labels, truth),
            "raw_ari": metrics.adjusted_rand_index(state.raw_labels, truth),
            "raw_nmi": metrics.nmi(state.raw_labels, truth),
        }
        if len(state.sequences) >= 2:
            rep.f_beta_table = ablation_table(cfg, state.sequences)
    else:
        rep.note = "no ground truth"
    return rep


def run_pipeline(cfg: PipelineConfig, ds: Dataset):
    """All stages in order. Returns (report, per-observation labels, state)."""
    timings: Dict[str, float] = {}
    state = PipelineState(dataset=ds)
    try:
        with _stage("track", timings):
            state.sequences = stage_track(cfg, ds)
        with _stage("graph", timings):
            state.graph = stage_graph(cfg, state.sequences)
        with _stage("sample", timings):
            (state.triplets, state.triplet_sequences, state.confidences,
             state.skipped) = stage_sample(cfg, ds, state.graph)
        with _stage("train", timings):
            state.net, state.loss_history = stage_train(cfg, ds, state.triplets, state.confidences)
        with _stage("cluster", timings):
            state.labels, state.raw_labels = stage_cluster(cfg, ds, state.net)
        with _stage("eval", timings):
            report = stage_evaluate(cfg, state, timings)
    except StageError as exc:
        # callers persist whatever finished before the failure
        exc.state = state
        raise
    report.timings = timings
    return report, state.labels, state


# -- persistence -------------------------------------------------------------

FILES = {
    "config": "config.json",
    "sequences": "sequences.csv",
    "graph": "graph.csv",
    "triplets": "triplets.csv",
    "checkpoint": "checkpoint.txt",
    "train_log": "train_log.csv",
    "labels": "labels.csv",
    "report": "report.json",
    "timings": "timings.json",
}


def save_config(cfg: PipelineConfig, out: Path):
    (out / FILES["config"]).write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_sequences(sequences: List[MaskSequence], out: Path):
    with (out / FILES["sequences"]).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obs_id", "sequence", "sequence_id"])
        for i, s in enumerate(sequences):
            for o in s.observations:
                w.writerow([o.obs_id, i, s.id])


def load_sequences(ds: Dataset, out: Path) -> List[MaskSequence]:
    path = out / FILES["sequences"]
    if not path.exists():
        raise InputError(f"missing file: {path} (run the 'track' stage first)")
    obs = {o.obs_id: o for o in ds.observations()}
    seqs: Dict[int, MaskSequence] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            if row["obs_id"] not in obs:
                raise InputError(f"{path}:{lineno}: unknown obs_id {row['obs_id']!r}")
            s = seqs.setdefault(int(row["sequence"]), MaskSequence(id=row["sequence_id"]))
            s.observations.append(obs[row["obs_id"]])
    return [seqs[i] for i in sorted(seqs)]


def save_triplets(idx, seq_idx, conf, skipped, ds: Dataset, out: Path):
    ids = [o.obs_id for o in ds.observations()]
    with (out / FILES["triplets"]).open("w", newline="", encoding="utf-8") as fh:
        fh.write(f"# skipped={skipped}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["anchor", "positive", "negative", "anchor_seq", "positive_seq", "negative_seq", "confidence"])
        for (a, p, n), (sa, sp, sn), c in zip(idx.tolist(), seq_idx.tolist(), conf.tolist()):
            w.writerow([ids[a], ids[p], ids[n], sa, sp, sn, f"{c:.17g}"])


def load_triplets(ds: Dataset, out: Path):
    path = out / FILES["triplets"]
    if not path.exists():
        raise InputError(f"missing file: {path} (run the 'sample' stage first)")
    lines = path.read_text(encoding="utf-8").splitlines()
    skipped = 0
    if lines and lines[0].startswith("# skipped="):
        skipped = int(lines[0].split("=", 1)[1])
        lines = lines[1:]
    reader = csv.DictReader(lines)
    idx, seq_idx, conf = [], [], []
    for lineno, row in enumerate(reader, 3):
        try:
            idx.append([ds.index_of(row[k]) for k in ("anchor", "positive", "negative")])
        except KeyError as exc:
            raise InputError(f"{path}:{lineno}: unknown obs_id {exc}") from None
        seq_idx.append([int(row[k]) for k in ("anchor_seq", "positive_seq", "negative_seq")])
        conf.append(float(row["confidence"]))
    return (np.array(idx, dtype=np.int64).reshape(-1, 3), np.array(seq_idx, dtype=np.int64).reshape(-1, 3),
            np.array(conf), skipped)


def save_train_log(history, out: Path):
    with (out / FILES["train_log"]).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for e, v in enumerate(history):
            w.writerow([e, f"{v:.17g}"])


def load_train_log(out: Path) -> List[float]:
    path = out / FILES["train_log"]
    if not path.exists():
        raise InputError(f"missing file: {path} (run the 'train' stage first)")
    with path.open(newline="", encoding="utf-8") as fh:
        return [float(r["mean_loss"]) for r in csv.DictReader(fh)]


def save_labels(ds: Dataset, labels, raw_labels, out: Path):
    with (out / FILES["labels"]).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obs_id", "cluster", "raw_cluster"])
        for o, l, r in zip(ds.observations(), labels.tolist(), raw_labels.tolist()):
            w.writerow([o.obs_id, l, r])


def load_labels(ds: Dataset, out: Path):
    path = out / FILES["labels"]
    if not path.exists():
        raise InputError(f"missing file: {path} (run the 'cluster' stage first)")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = {r["obs_id"]: (int(r["cluster"]), int(r["raw_cluster"])) for r in csv.DictReader(fh)}
    try:
        pairs = [rows[o.obs_id] for o in ds.observations()]
    except KeyError as exc:
        raise InputError(f"{path}: no label for obs_id {exc}") from None
    return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def save_report(report: RunReport, out: Path):
    (out / FILES["report"]).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    (out / FILES["timings"]).write_text(json.dumps(report.timings, indent=2) + "\n", encoding="utf-8")


def save_state(out, cfg: PipelineConfig, state: PipelineState, report: Optional[RunReport] = None):
    """Persist every available intermediate of ``state`` under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out)
    if state.sequences is not None:
        save_sequences(state.sequences, out)
    if state.graph is not None:
        save_graph_csv(state.graph, out / FILES["graph"])
    if state.triplets is not None:
        save_triplets(state.triplets, state.triplet_sequences, state.confidences, state.skipped, state.dataset, out)
    if state.net is not None:
        save_checkpoint(state.net, out / FILES["checkpoint"])
    if state.loss_history is not None:
        save_train_log(state.loss_history, out)
    if state.labels is not None:
        save_labels(state.dataset, state.labels, state.raw_labels, out)
    if report is not None:
        save_report(report, out)


def load_state(out, ds: Dataset) -> PipelineState:
    """Reload whatever intermediates exist under ``out``."""
    out = Path(out)
    state = PipelineState(dataset=ds)
    if (out / FILES["sequences"]).exists():
        state.sequences = load_sequences(ds, out)
    if (out / FILES["graph"]).exists():
        state.graph = load_graph_csv(out / FILES["graph"], state.sequences)
    if (out / FILES["triplets"]).exists():
        state.triplets, state.triplet_sequences, state.confidences, state.skipped = load_triplets(ds, out)
    if (out / FILES["checkpoint"]).exists():
        state.net = load_checkpoint(out / FILES["checkpoint"])
    if (out / FILES["train_log"]).exists():
        state.loss_history = load_train_log(out)
    if (out / FILES["labels"]).exists():
        state.labels, state.raw_labels = load_labels(ds, out)
    return state
