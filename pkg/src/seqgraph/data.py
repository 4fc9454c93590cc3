"""Datasets of per-mask features: manifest ingestion, export and synthetic generation.

Manifest layout (``manifest.json``)::

    {"videos": [{"id": "v0", "boxes": "v0_boxes.csv", "features": "v0_features.csv"}],
     "truth": "truth.csv"}

or, bypassing tracking::

    {"mode": "sequences",
     "sequences": [{"id": "s0", "features": "s0_features.csv"}],
     "truth": "truth.csv"}

CSV files are UTF-8 with a header row:

* boxes: ``video_id,frame_idx,obs_id,x,y,w,h``
* features: ``obs_id,f0,...,f{d-1}``
* truth: ``obs_id,class_id,instance_id``

Paths inside the manifest are relative to the manifest's directory.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .tracking import BoundingBox, MaskObservation, MaskSequence

__all__ = [
    "InputError",
    "Dataset",
    "load_dataset",
    "write_dataset",
    "generate_synthetic",
]


class InputError(ValueError):
    """Malformed or missing input data."""


@dataclass
class Dataset:
    videos: Dict[str, List[List[MaskObservation]]]
    feature_dim: int
    has_truth: bool
    sequences: Optional[List[MaskSequence]] = None  # set when tracking is bypassed
    _index: Dict[str, int] = field(default=None, init=False, repr=False)

    def observations(self) -> List[MaskObservation]:
        return [o for frames in self.videos.values() for frame in frames for o in frame]

    @property
    def features(self) -> np.ndarray:
        return np.stack([o.feature for o in self.observations()])

    def index_of(self, obs_id: str) -> int:
        if self._index is None:
            self._index = {o.obs_id: i for i, o in enumerate(self.observations())}
        return self._index[obs_id]

    def truth_labels(self) -> np.ndarray:
        return np.array([o.truth_label for o in self.observations()])


def _read_csv(path: Path, expected_prefix: List[str]):
    if not path.exists():
        raise InputError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if header[: len(expected_prefix)] != expected_prefix:
            raise InputError(f"{path}:1: expected header starting with {','.join(expected_prefix)}")
        rows = [(lineno, row) for lineno, row in enumerate(reader, 2) if row]
    return header, rows


def _read_features(path: Path, dim: Optional[int]) -> Dict[str, np.ndarray]:
    header, rows = _read_csv(path, ["obs_id"])
    width = len(header) - 1
    if width < 1:
        raise InputError(f"{path}:1: no feature columns")
    if dim is not None and width != dim:
        raise InputError(f"{path}:1: feature dimension {width} differs from {dim}")
    out = {}
    for lineno, row in rows:
        if len(row) - 1 != width:
            raise InputError(f"{path}:{lineno}: expected {width} feature values, got {len(row) - 1}")
        try:
            vec = np.array([float(v) for v in row[1:]])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(vec)):
            raise InputError(f"{path}:{lineno}: non-finite feature value")
        if row[0] in out:
            raise InputError(f"{path}:{lineno}: duplicate obs_id {row[0]!r}")
        out[row[0]] = vec
    return out


def _read_truth(path: Path):
    _, rows = _read_csv(path, ["obs_id", "class_id", "instance_id"])
    truth = {}
    for lineno, row in rows:
        if len(row) < 3:
            raise InputError(f"{path}:{lineno}: expected obs_id,class_id,instance_id")
        try:
            truth[row[0]] = (int(row[1]), row[2])
        except ValueError:
            raise InputError(f"{path}:{lineno}: class_id must be an integer") from None
    return truth


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise InputError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{manifest_path}: invalid JSON ({exc})") from None
    root = manifest_path.parent
    truth = _read_truth(root / manifest["truth"]) if manifest.get("truth") else None

    dim = None
    videos: Dict[str, List[List[MaskObservation]]] = {}
    sequences = None
    seen_ids = set()

    def attach(obs, where):
        if obs.obs_id in seen_ids:
            raise InputError(f"{where}: duplicate obs_id {obs.obs_id!r}")
        seen_ids.add(obs.obs_id)
        if truth is not None:
            if obs.obs_id not in truth:
                raise InputError(f"{manifest['truth']}: no truth row for obs_id {obs.obs_id!r}")
            obs.truth_label, obs.truth_instance = truth[obs.obs_id]

    if manifest.get("mode") == "sequences":
        sequences = []
        for entry in manifest.get("sequences", []):
            fpath = root / entry["features"]
            feats = _read_features(fpath, dim)
            if not feats:
                raise InputError(f"{fpath}: sequence {entry['id']} has no observations")
            dim = len(next(iter(feats.values())))
            frames = []
            seq = MaskSequence(id=str(entry["id"]))
            for t, (obs_id, vec) in enumerate(feats.items()):
                obs = MaskObservation(video_id=str(entry["id"]), frame_idx=t, box=None,
                                      feature=vec, obs_id=obs_id)
                attach(obs, fpath)
                frames.append([obs])
                seq.observations.append(obs)
            videos[seq.id] = frames
            sequences.append(seq)
    else:
        for entry in manifest.get("videos", []):
            vid = str(entry["id"])
            fpath = root / entry["features"]
            bpath = root / entry["boxes"]
            feats = _read_features(fpath, dim)
            if feats:
                dim = len(next(iter(feats.values())))
            _, rows = _read_csv(bpath, ["video_id", "frame_idx", "obs_id", "x", "y", "w", "h"])
            by_frame: Dict[int, List[MaskObservation]] = {}
            for lineno, row in rows:
                if len(row) != 7:
                    raise InputError(f"{bpath}:{lineno}: expected 7 fields, got {len(row)}")
                if row[0] != vid:
                    raise InputError(f"{bpath}:{lineno}: video_id {row[0]!r} does not match manifest id {vid!r}")
                try:
                    frame = int(row[1])
                    box = BoundingBox(*(float(v) for v in row[3:7]))
                except ValueError as exc:
                    raise InputError(f"{bpath}:{lineno}: {exc}") from None
                if row[2] not in feats:
                    raise InputError(f"{bpath}:{lineno}: obs_id {row[2]!r} missing from {fpath}")
                obs = MaskObservation(video_id=vid, frame_idx=frame, box=box,
                                      feature=feats[row[2]], obs_id=row[2])
                attach(obs, f"{bpath}:{lineno}")
                by_frame.setdefault(frame, []).append(obs)
            if by_frame and sorted(by_frame) != list(range(max(by_frame) + 1)):
                missing = sorted(set(range(max(by_frame) + 1)) - set(by_frame))
                raise InputError(f"{bpath}: frame indices not contiguous from 0 (missing {missing[:5]})")
            videos[vid] = [by_frame[t] for t in sorted(by_frame)]

    if dim is None:
        raise InputError(f"{manifest_path}: no observations found")
    return Dataset(videos=videos, feature_dim=dim, has_truth=truth is not None, sequences=sequences)


def _fmt(v) -> str:
    return f"{v:.17g}"


def write_dataset(ds: Dataset, directory) -> Path:
    """Write ``ds`` as a manifest plus CSV files; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fheader = ["obs_id"] + [f"f{i}" for i in range(ds.feature_dim)]
    manifest = {}
    if ds.sequences is not None:
        entries = []
        for seq in ds.sequences:
            name = f"{seq.id}_features.csv"
            with (directory / name).open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(fheader)
                for o in seq.observations:
                    w.writerow([o.obs_id] + [_fmt(v) for v in o.feature])
            entries.append({"id": seq.id, "features": name})
        manifest = {"mode": "sequences", "sequences": entries}
    else:
        entries = []
        for vid, frames in ds.videos.items():
            fname, bname = f"{vid}_features.csv", f"{vid}_boxes.csv"
            with (directory / fname).open("w", newline="", encoding="utf-8") as ff, \
                    (directory / bname).open("w", newline="", encoding="utf-8") as fb:
                wf = csv.writer(ff, lineterminator="\n")
                wb = csv.writer(fb, lineterminator="\n")
                wf.writerow(fheader)
                wb.writerow(["video_id", "frame_idx", "obs_id", "x", "y", "w", "h"])
                for frame in frames:
                    for o in frame:
                        wf.writerow([o.obs_id] + [_fmt(v) for v in o.feature])
                        b = o.box
                        wb.writerow([vid, o.frame_idx, o.obs_id, _fmt(b.x), _fmt(b.y), _fmt(b.w), _fmt(b.h)])
            entries.append({"id": vid, "boxes": bname, "features": fname})
        manifest = {"videos": entries}
    if ds.has_truth:
        with (directory / "truth.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["obs_id", "class_id", "instance_id"])
            for o in ds.observations():
                w.writerow([o.obs_id, o.truth_label, o.truth_instance])
        manifest["truth"] = "truth.csv"
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path


def _dwell_lengths(frames, views, rng, concentration):
    if concentration is None or views == 1:
        return [len(c) for c in np.array_split(np.arange(frames), views)]
    floor = min(2, frames // views)
    spare = frames - floor * views
    share = rng.dirichlet(np.full(views, concentration))
    extra = np.floor(share * spare).astype(int)
    extra[: spare - extra.sum()] += 1
    return (floor + extra).tolist()


def generate_synthetic(n_classes: int = 10, instances_per_class: int = 5, frames_per_instance: int = 40,
                       feature_dim: int = 64, viewpoint_count: int = 5, noise_sigma: float = 0.15,
                       seed: int = 0, *, class_scale: float = 0.4, instance_sigma: float = 0.2,
                       viewpoint_scale: float = 0.5, shared_viewpoint_scale: float = 2.0,
                       permute_viewpoints: bool = False,
                       dwell_concentration: Optional[float] = None, objects_per_video: int = 5,
                       box_size: float = 40.0, max_drift: Optional[float] = None,
                       as_sequences: bool = False) -> Dataset:
    """Videos of drifting, non-overlapping boxes with class-structured features.

    Feature of a frame = class prototype + instance offset + the class's
    offset for the current viewpoint + isotropic noise. A viewpoint offset
    common to all classes is added when ``shared_viewpoint_scale`` > 0. Each instance sweeps
    its viewpoints in contiguous blocks (shuffled per instance when
    ``permute_viewpoints``; unequal block lengths drawn from a Dirichlet when
    ``dwell_concentration`` is given). Each video holds up to
    ``objects_per_video`` instances in separate horizontal lanes.
    """
    for name, v in (("n_classes", n_classes), ("instances_per_class", instances_per_class),
                    ("frames_per_instance", frames_per_instance), ("feature_dim", feature_dim),
                    ("viewpoint_count", viewpoint_count), ("objects_per_video", objects_per_video)):
        if v < 1:
            raise ValueError(f"{name} must be >= 1")
    rng = np.random.default_rng(seed)
    drift = box_size / 4 if max_drift is None else max_drift
    if drift >= box_size / 2:
        raise ValueError("max_drift must stay below half the box size")

    prototypes = rng.normal(0.0, class_scale, size=(n_classes, feature_dim))
    view_offsets = rng.normal(0.0, viewpoint_scale, size=(n_classes, viewpoint_count, feature_dim))
    if shared_viewpoint_scale:
        view_offsets += rng.normal(0.0, shared_viewpoint_scale, size=(viewpoint_count, feature_dim))

    instances = [(c, i) for c in range(n_classes) for i in range(instances_per_class)]
    order = rng.permutation(len(instances))
    videos: Dict[str, List[List[MaskObservation]]] = {}
    sequences: List[MaskSequence] = []
    for v_idx, start in enumerate(range(0, len(order), objects_per_video)):
        vid = f"v{v_idx:03d}"
        members = [instances[k] for k in order[start : start + objects_per_video]]
        tracks = []
        for lane, (cls, inst) in enumerate(members):
            base = prototypes[cls] + rng.normal(0.0, instance_sigma, size=feature_dim)
            views = rng.permutation(viewpoint_count) if permute_viewpoints else np.arange(viewpoint_count)
            lengths = _dwell_lengths(frames_per_instance, viewpoint_count, rng, dwell_concentration)
            schedule = np.repeat(views, lengths)
            feats = (base + view_offsets[cls, schedule]
                     + rng.normal(0.0, noise_sigma, size=(frames_per_instance, feature_dim)))
            lane_x = lane * 3 * box_size
            x = lane_x + rng.uniform(0, box_size)
            y = rng.uniform(0, box_size)
            vx, vy = rng.uniform(-drift, drift, size=2)
            boxes = []
            for _ in range(frames_per_instance):
                boxes.append(BoundingBox(float(x), float(y), box_size, box_size))
                x, vx = _bounce(x + vx, vx, lane_x, lane_x + box_size)
                y, vy = _bounce(y + vy, vy, 0.0, box_size)
            tracks.append((cls, cls * instances_per_class + inst, feats, boxes))
        frames = []
        for t in range(frames_per_instance):
            frame = []
            for j, (cls, inst_id, feats, boxes) in enumerate(tracks):
                frame.append(MaskObservation(video_id=vid, frame_idx=t, box=boxes[t], feature=feats[t],
                                             obs_id=f"{vid}_{t:04d}_{j}", truth_label=int(cls),
                                             truth_instance=int(inst_id)))
            frames.append(frame)
        if as_sequences:
            for j in range(len(tracks)):
                sid = f"{vid}_s{j}"
                obs = [frames[t][j] for t in range(frames_per_instance)]
                for t, o in enumerate(obs):
                    o.video_id = sid
                sequences.append(MaskSequence(id=sid, observations=obs))
                videos[sid] = [[o] for o in obs]
        else:
            videos[vid] = frames
    return Dataset(videos=videos, feature_dim=feature_dim, has_truth=True,
                   sequences=sequences if as_sequences else None)


def _bounce(pos, vel, lo, hi):
    if pos < lo:
        return lo + (lo - pos), -vel
    if pos > hi:
        return hi - (pos - hi), -vel
    return pos, vel
