import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqgraph.data import generate_synthetic
from seqgraph.tracking import BoundingBox, MaskObservation, MaskSequence, build_sequences, iou, match_frames
from oracles import grid_iou


def obs(x, y, w=10, h=10, frame=0, vid="v"):
    return MaskObservation(video_id=vid, frame_idx=frame, box=BoundingBox(x, y, w, h), feature=np.zeros(2))


def test_iou_identical_and_disjoint():
    a = BoundingBox(0, 0, 4, 3)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(10, 10, 2, 2)) == 0.0
    assert iou(a, BoundingBox(4, 0, 2, 3)) == 0.0  # touching edges


def test_iou_half_shift():
    want = grid_iou((0, 0, 2, 2), (1, 0, 2, 2))
    assert want == pytest.approx(1 / 3)
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)) == pytest.approx(want)


int_boxes = st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(1, 6), st.integers(1, 6))


@settings(max_examples=200, deadline=None)
@given(int_boxes, int_boxes)
def test_iou_matches_grid_count_and_is_symmetric(a, b):
    ba, bb = BoundingBox(*a), BoundingBox(*b)
    assert iou(ba, bb) == pytest.approx(grid_iou(a, b))
    assert iou(ba, bb) == iou(bb, ba)
    assert 0.0 <= iou(ba, bb) <= 1.0


def test_box_validation():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, 0, 1)
    with pytest.raises(ValueError):
        BoundingBox(float("nan"), 0, 1, 1)


def test_unmoved_box_matches():
    assert match_frames([obs(0, 0)], [obs(0, 0, frame=1)]) == [(0, 0)]


def test_empty_frames():
    assert match_frames([], [obs(0, 0)]) == []
    assert match_frames([obs(0, 0)], []) == []


def test_crossing_nearest_neighbours_keep_identity():
    # each box overlaps only its own successor, which is listed in swapped order
    curr = [obs(0, 0), obs(30, 0)]
    nxt = [obs(33, 0, frame=1), obs(3, 0, frame=1)]
    scores = [[iou(a.box, b.box) for b in nxt] for a in curr]
    totals = {perm: sum(scores[i][perm[i]] for i in range(2)) for perm in itertools.permutations(range(2))}
    best = max(totals, key=totals.get)
    assert best == (1, 0)
    assert sorted(match_frames(curr, nxt)) == [(0, 1), (1, 0)]


def test_threshold_drops_non_overlapping_match():
    assert match_frames([obs(0, 0)], [obs(50, 50, frame=1)], iou_min=0.1) == []


def test_matching_maximises_total_iou():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, m = (int(v) for v in rng.integers(1, 6, size=2))
        curr = [obs(*rng.integers(0, 20, size=2)) for _ in range(n)]
        nxt = [obs(*rng.integers(0, 20, size=2), frame=1) for _ in range(m)]
        scores = np.array([[iou(a.box, b.box) for b in nxt] for a in curr])
        got = sum(scores[i, j] for i, j in match_frames(curr, nxt, iou_min=0.0))
        if n <= m:
            best = max(sum(scores[i, p[i]] for i in range(n)) for p in itertools.permutations(range(m), n))
        else:
            best = max(sum(scores[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))
        assert got == pytest.approx(best)


def test_static_box_gives_one_sequence():
    frames = [[obs(5, 5, frame=t)] for t in range(10)]
    seqs = build_sequences(frames)
    assert len(seqs) == 1 and len(seqs[0]) == 10


def test_two_disjoint_static_boxes():
    frames = [[obs(0, 0, frame=t), obs(50, 0, frame=t)] for t in range(6)]
    seqs = build_sequences(frames)
    assert [len(s) for s in seqs] == [6, 6]


def test_track_ends_and_new_track_starts():
    frames = [[obs(0, 0, frame=t)] for t in range(5)] + [[obs(100, 100, frame=t)] for t in range(5, 10)]
    seqs = build_sequences(frames)
    assert [len(s) for s in seqs] == [5, 5]
    assert [o.frame_idx for o in seqs[1].observations] == list(range(5, 10))


def test_sequences_partition_observations():
    ds = generate_synthetic(n_classes=2, instances_per_class=4, frames_per_instance=12, feature_dim=4,
                            objects_per_video=3, seed=9)
    for frames in ds.videos.values():
        seqs = build_sequences(frames)
        flat = [id(o) for s in seqs for o in s.observations]
        total = sum(len(f) for f in frames)
        assert len(flat) == total == len(set(flat))
        for s in seqs:
            s.validate()


def test_sequence_validation():
    s = MaskSequence("s", [obs(0, 0, frame=2), obs(0, 0, frame=1)])
    with pytest.raises(ValueError):
        s.validate()
    with pytest.raises(ValueError):
        MaskSequence("e").validate()
