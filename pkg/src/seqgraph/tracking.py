"""Frame-to-frame IoU tracking of object masks into per-object sequences."""

from dataclasses import dataclass, field
from typing import Hashable, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import solve_assignment

__all__ = [
    "BoundingBox",
    "MaskObservation",
    "MaskSequence",
    "iou",
    "match_frames",
    "build_sequences",
]


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (np.isfinite([self.x, self.y, self.w, self.h]).all()):
            raise ValueError(f"non-finite box {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass
class MaskObservation:
    video_id: str
    frame_idx: int
    box: Optional[BoundingBox]
    feature: np.ndarray
    obs_id: str = ""
    truth_label: Optional[int] = None
    truth_instance: Optional[Hashable] = None


@dataclass
class MaskSequence:
    id: str
    observations: List[MaskObservation] = field(default_factory=list)

    def __len__(self):
        return len(self.observations)

    @property
    def features(self) -> np.ndarray:
        return np.stack([o.feature for o in self.observations])

    def validate(self):
        if not self.observations:
            raise ValueError(f"sequence {self.id} is empty")
        videos = {o.video_id for o in self.observations}
        if len(videos) != 1:
            raise ValueError(f"sequence {self.id} spans videos {sorted(videos)}")
        frames = [o.frame_idx for o in self.observations]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError(f"sequence {self.id} frame indices not strictly increasing")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def match_frames(curr: Sequence[MaskObservation], nxt: Sequence[MaskObservation],
                 iou_min: float = 0.1) -> List[Tuple[int, int]]:
    """Pairs (curr_idx, next_idx) of the IoU-maximizing assignment.

    Pairs whose IoU falls below ``iou_min`` are dropped.
    """
    if not curr or not nxt:
        return []
    scores = np.array([[iou(a.box, b.box) for b in nxt] for a in curr])
    matching = solve_assignment(scores, sense="maximize")
    return [(i, j) for i, j in matching.pairs if scores[i, j] >= iou_min and scores[i, j] > 0]


def build_sequences(frames: Sequence[Sequence[MaskObservation]], iou_min: float = 0.1,
                    prefix: str = "") -> List[MaskSequence]:
    """Chain matched observations of one video into sequences.

    ``frames`` lists the observations of each frame in temporal order.
    Sequences are numbered in order of their first observation.
    """
    sequences: List[MaskSequence] = []
    open_tracks: List[int] = []  # sequence index per observation of the previous frame
    prev: Sequence[MaskObservation] = []
    for obs in frames:
        links = dict((j, i) for i, j in match_frames(prev, obs, iou_min))
        current_tracks = []
        for j, o in enumerate(obs):
            if j in links:
                s = open_tracks[links[j]]
            else:
                s = len(sequences)
                sequences.append(MaskSequence(id=f"{prefix}{s}"))
            sequences[s].observations.append(o)
            current_tracks.append(s)
        open_tracks = current_tracks
        prev = obs
    return sequences
