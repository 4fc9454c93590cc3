import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqgraph.data import generate_synthetic
from seqgraph.simgraph import (
    DISTANCE_METHODS,
    SimilarityGraph,
    TransitionMatrix,
    build_graph,
    compute_w_minus,
    compute_w_plus,
    conf,
    distance_matrix,
    draw_sequence_triplets,
    load_graph_csv,
    negative_distribution,
    positive_distribution,
    sample_triplets,
    save_graph_csv,
    sequence_distance,
    transition_matrix,
    viewpoint_centroids,
)
from seqgraph.tracking import MaskObservation, MaskSequence


def seq(features, sid="s"):
    feats = np.atleast_2d(np.asarray(features, dtype=float))
    return MaskSequence(sid, [MaskObservation(sid, t, None, f, obs_id=f"{sid}_{t}") for t, f in enumerate(feats)])


def graph_from_w(w):
    w = np.asarray(w, dtype=float)
    n = len(w)
    seqs = [seq(np.full((3, 2), i), f"s{i}") for i in range(n)]
    return SimilarityGraph(w_plus=w.copy(), w_minus=np.zeros_like(w), lam=1.0, w=w, sequences=seqs)


def random_graph(rng, n, density=0.5):
    w = rng.uniform(0, 5, size=(n, n)) * (rng.random((n, n)) < density)
    w = np.triu(w, 1)
    return graph_from_w(w + w.T)


# -- w_plus / w_minus ---------------------------------------------------------

def test_w_plus_counts_cross_pairs_in_one_cluster():
    a, b = seq(np.ones((3, 2)), "a"), seq(np.ones((4, 2)), "b")
    w = compute_w_plus([a, b], k_global=1)
    np.testing.assert_array_equal(w, [[0, 12], [12, 0]])


def test_w_plus_zero_for_disjoint_clusters():
    a, b = seq(np.zeros((3, 2)), "a"), seq(np.full((3, 2), 100.0), "b")
    assert compute_w_plus([a, b], k_global=2)[0, 1] == 0


def test_w_plus_single_sequence():
    np.testing.assert_array_equal(compute_w_plus([seq(np.ones((5, 2)))], k_global=3), [[0.0]])


def test_w_plus_clamps_k_to_observation_count():
    a, b = seq([[0.0], [1.0]], "a"), seq([[0.0], [1.0]], "b")
    # four points and 500 requested clusters -> one cluster per observation, so nothing co-occurs
    assert compute_w_plus([a, b], k_global=500)[0, 1] == 0
    # with fewer clusters than distinct values the duplicates share a cluster
    assert compute_w_plus([a, b], k_global=2)[0, 1] == 2


def test_viewpoint_centroids_clamp_and_identity():
    f = np.array([1.0, 2.0, 3.0])
    c = viewpoint_centroids(seq(np.tile(f, (3, 1))), n_viewpoints=5)
    assert c.shape == (3, 3)
    np.testing.assert_array_equal(c, np.tile(f, (3, 1)))
    pts = np.eye(5) * 10
    c = viewpoint_centroids(seq(pts), n_viewpoints=5)
    np.testing.assert_allclose(sorted(c.tolist()), sorted(pts.tolist()))


def test_viewpoint_centroids_recover_prototypes():
    rng = np.random.default_rng(0)
    protos = rng.normal(scale=10, size=(5, 8))
    labels = np.arange(100) % 5
    frames = protos[labels] + rng.normal(scale=0.1, size=(100, 8))
    c = viewpoint_centroids(seq(frames), n_viewpoints=5, seed=3)
    means = np.stack([frames[labels == k].mean(axis=0) for k in range(5)])
    for m in means:
        assert np.min(np.linalg.norm(c - m, axis=1)) < 1e-9
    for p in protos:
        assert np.min(np.linalg.norm(c - p, axis=1)) < 0.1 * np.sqrt(8)


def test_w_minus_examples():
    a = seq(np.eye(3), "a")
    assert compute_w_minus(a, seq(np.eye(3), "b")) == pytest.approx(0.0, abs=1e-12)
    assert compute_w_minus(seq([[0.0, 0.0]]), seq([[3.0, 0.0]])) == pytest.approx(3.0)
    p, q = [0.0, 0.0], [5.0, 1.0]
    assert compute_w_minus(seq([p, q]), seq([q, p])) == pytest.approx(0.0, abs=1e-12)


def test_w_minus_raw_frames_mode():
    a, b = seq([[0.0], [10.0], [10.0]]), seq([[10.0], [1.0]])
    assert compute_w_minus(a, b, use_viewpoints=False) == pytest.approx(1.0)


# -- graph assembly -------------------------------------------------------------

def test_weight_formula_and_clamp():
    wp = np.array([[0, 5, 1], [5, 0, 0], [1, 0, 0]], dtype=float)
    wm = np.array([[0, 2, 4], [2, 0, 1], [4, 1, 0]], dtype=float)
    from seqgraph.simgraph import _combine
    w = _combine(wp, wm, 1.0)
    assert w[0, 1] == 3 and w[0, 2] == 0 and w[1, 2] == 0
    assert np.all(np.diag(w) == 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 10), st.floats(0.0, 10))
def test_edges_grow_with_lambda(seed, lam, extra):
    from seqgraph.simgraph import _combine
    rng = np.random.default_rng(seed)
    wp = rng.integers(0, 20, size=(6, 6)).astype(float)
    wp = wp + wp.T
    wm = rng.uniform(0, 30, size=(6, 6))
    wm = wm + wm.T
    small = _combine(wp, wm, lam) > 0
    large = _combine(wp, wm, lam + extra) > 0
    assert np.all(large[small])


def test_build_graph_symmetry_and_rejection():
    ds = generate_synthetic(n_classes=3, instances_per_class=2, frames_per_instance=10, feature_dim=6,
                            objects_per_video=6, as_sequences=True, seed=1)
    g = build_graph(ds.sequences, lam=1.0, k_global=12, seed=0)
    for m in (g.w_plus, g.w_minus, g.w):
        np.testing.assert_allclose(m, m.T, atol=1e-9)
    assert np.all(np.diag(g.w) == 0)
    with pytest.raises(ValueError):
        build_graph(ds.sequences[:1])


def test_intra_class_weights_exceed_inter_class():
    ds = generate_synthetic(n_classes=4, instances_per_class=4, frames_per_instance=20, feature_dim=16,
                            as_sequences=True, seed=2)
    g = build_graph(ds.sequences, lam=1.0, k_global=40, seed=0)
    y = np.array([s.observations[0].truth_label for s in ds.sequences])
    same = (y[:, None] == y[None, :]) & ~np.eye(len(y), dtype=bool)
    assert g.w[same].mean() > g.w[~same & ~np.eye(len(y), dtype=bool)].mean()


# -- transition matrices --------------------------------------------------------

def test_row_normalisation():
    g = graph_from_w([[0, 2, 3, 5], [2, 0, 0, 0], [3, 0, 0, 0], [5, 0, 0, 0]])
    tm = transition_matrix(g, 1)
    np.testing.assert_allclose(tm.t[0], [0, 0.2, 0.3, 0.5])
    np.testing.assert_array_equal(tm.t_h, tm.t)


def test_isolated_node_walks_uniformly():
    g = graph_from_w([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    tm = transition_matrix(g, 2)
    np.testing.assert_allclose(tm.t[2], [0.5, 0.5, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 10))
def test_powers_stay_stochastic(seed, n, h):
    tm = transition_matrix(random_graph(np.random.default_rng(seed), n), h)
    for m in (tm.t, tm.t_h):
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(m >= 0) and np.all(m <= 1 + 1e-12)
    np.testing.assert_allclose(tm.t_h, np.linalg.matrix_power(tm.t, h), atol=1e-12)


def test_complement_example():
    tm = TransitionMatrix(t=np.eye(3), horizon=1, t_h=np.array([[0, 1, 0], [0.5, 0, 0.5], [0.5, 0.5, 0]]))
    np.testing.assert_allclose(negative_distribution(tm, 0), [0, 0, 1])
    np.testing.assert_allclose(positive_distribution(tm, 0), [0, 1, 0])


def test_degenerate_positive_distribution_is_none():
    # two-node component with an even horizon returns to the anchor with certainty
    g = graph_from_w([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    tm = transition_matrix(g, 2)
    assert positive_distribution(tm, 0) is None


# -- confidence -----------------------------------------------------------------

def test_conf_examples():
    g = graph_from_w([[0, 10, 0, 8, 3], [10, 0, 0, 0, 0], [0, 0, 0, 0, 0], [8, 0, 0, 0, 0], [3, 0, 0, 0, 0]])
    assert conf(g, 0, 1, 2) == 1.0  # positive at the row max, negative at the row min
    assert conf(g, 0, 2, 4) == 0.0  # positive at the row min
    assert conf(g, 0, 3, 4) == pytest.approx(0.7)  # min(0.8, 1 - 0.3)


def test_conf_flat_row_is_one():
    g = graph_from_w(np.ones((4, 4)) - np.eye(4))
    assert conf(g, 0, 1, 2) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_conf_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, 6)
    s, p, q = rng.choice(6, size=3, replace=False)
    assert 0.0 <= conf(g, s, p, q) <= 1.0


# -- sampling -------------------------------------------------------------------

def test_star_graph_positive_is_forced():
    g = graph_from_w([[0, 1, 0, 0], [1, 0, 1, 1], [0, 1, 0, 1], [0, 1, 1, 0]])
    tm = transition_matrix(g, 1)
    trips, skipped = sample_triplets(tm, g, n_triplets=40, frames_per_pair=2, rng_seed=0)
    assert skipped == 0
    assert {t.positive[0] for t in trips if t.anchor[0] == 0} == {1}


def test_negative_from_complement_with_anchor_removed():
    tm = TransitionMatrix(t=np.eye(3), horizon=1, t_h=np.array([[0, 1, 0], [0.5, 0, 0.5], [0.5, 0.5, 0]]))
    anchors, pos, neg, skipped = draw_sequence_triplets(tm, 300, np.random.default_rng(0))
    assert set(neg[anchors == 0].tolist()) == {2}


def test_triplet_structure():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 7, density=0.8)
    tm = transition_matrix(g, 3)
    trips, skipped = sample_triplets(tm, g, n_triplets=70, frames_per_pair=3, rng_seed=1)
    assert len(trips) == 3 * (70 - skipped)
    for t in trips:
        assert t.anchor[0] != t.positive[0] and t.anchor[0] != t.negative[0]
        assert 0.0 <= t.confidence <= 1.0
        assert all(0 <= m[1] < 3 for m in (t.anchor, t.positive, t.negative))
    # anchors cycle through the nodes
    assert [t.anchor[0] for t in trips[::3]][:7] == list(range(7))


def test_constant_confidence_flag():
    g = random_graph(np.random.default_rng(2), 5, density=1.0)
    trips, _ = sample_triplets(transition_matrix(g, 2), g, 20, 1, 0, constant_confidence=True)
    assert all(t.confidence == 1.0 for t in trips)


def test_sampling_needs_three_sequences():
    g = graph_from_w([[0, 1], [1, 0]])
    with pytest.raises(ValueError):
        sample_triplets(transition_matrix(g, 1), g, 5)


def test_positive_frequencies_within_three_sigma():
    rng = np.random.default_rng(8)
    g = random_graph(rng, 5, density=1.0)
    tm = transition_matrix(g, 3)
    n = 100_000
    anchors, pos, _, _ = draw_sequence_triplets(tm, 5 * n, np.random.default_rng(0))
    for i in range(5):
        p = positive_distribution(tm, i)
        freq = np.bincount(pos[anchors == i], minlength=5) / n
        sigma = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) <= 3 * sigma + 1e-12)


def test_sampling_is_seeded():
    g = random_graph(np.random.default_rng(3), 6, density=1.0)
    tm = transition_matrix(g, 2)
    assert sample_triplets(tm, g, 30, 2, 9) == sample_triplets(tm, g, 30, 2, 9)


# -- sequence distances ------------------------------------------------------------

@pytest.mark.parametrize("method", DISTANCE_METHODS)
def test_identical_sequences_have_zero_distance(method):
    rng = np.random.default_rng(0)
    f = rng.normal(size=(23, 4))
    assert sequence_distance(seq(f, "a"), seq(f, "b"), method) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("method", DISTANCE_METHODS)
def test_single_frames_reduce_to_l2(method):
    a, b = seq([[1.0, 2.0]]), seq([[4.0, 6.0]])
    assert sequence_distance(a, b, method) == pytest.approx(5.0)


def test_alignment_advantage_over_cutting():
    p, q = [0.0, 0.0], [3.0, 4.0]
    same, swapped = seq([p, q]), seq([q, p])
    assert sequence_distance(seq([p, q]), same, "cut_ten") == 0.0
    assert sequence_distance(seq([p, q]), swapped, "cut_ten") == pytest.approx(5.0)
    assert sequence_distance(seq([p, q]), swapped, "viewpoint") == pytest.approx(0.0, abs=1e-12)


def test_mean_feature_and_cut_values():
    a = seq([[0.0], [2.0], [4.0], [6.0]])
    b = seq([[1.0], [1.0], [1.0], [1.0]])
    assert sequence_distance(a, b, "mean_feature") == pytest.approx(2.0)
    # four parts of one frame each: |0-1|, |2-1|, |4-1|, |6-1|
    assert sequence_distance(a, b, "cut_ten") == pytest.approx((1 + 1 + 3 + 5) / 4)


def test_top_nn_uses_nearest_counterparts():
    a = seq([[0.0], [10.0]])
    b = seq([[1.0], [2.0]])
    # a-side nearest: 1, 8; b-side nearest: 1, 2
    assert sequence_distance(a, b, "top_ten_nn", n_viewpoints=2) == pytest.approx(3.0)
    assert sequence_distance(a, b, "top_ten_nn", n_viewpoints=2, top=2) == pytest.approx(1.0)


def test_distance_matrix_matches_pairwise_calls():
    rng = np.random.default_rng(4)
    seqs = [seq(rng.normal(size=(int(rng.integers(1, 12)), 3)), f"s{i}") for i in range(5)]
    for method in DISTANCE_METHODS:
        d = distance_matrix(seqs, method)
        for i in range(5):
            for j in range(5):
                want = 0.0 if i == j else sequence_distance(seqs[i], seqs[j], method)
                assert d[i, j] == pytest.approx(want, abs=1e-9)
    with pytest.raises(ValueError):
        distance_matrix(seqs, "nope")


# -- graph CSV --------------------------------------------------------------------

def test_graph_csv_round_trip(tmp_path):
    ds = generate_synthetic(n_classes=3, instances_per_class=3, frames_per_instance=8, feature_dim=5,
                            as_sequences=True, seed=4)
    g = build_graph(ds.sequences, lam=1.0, k_global=20)
    path = tmp_path / "graph.csv"
    save_graph_csv(g, path)
    back = load_graph_csv(path)
    assert back.lam == g.lam and back.n == g.n
    np.testing.assert_array_equal(back.w, g.w)
    edges = g.w > 0
    np.testing.assert_array_equal(back.w_plus[edges], g.w_plus[edges])
    np.testing.assert_array_equal(back.w_minus[edges], g.w_minus[edges])
    text = path.read_text().splitlines()
    assert text[0] == f"# nodes={g.n} lambda=1.0"
    assert text[1] == "i,j,w_plus,w_minus,w"
    assert len(text) == 2 + g.edge_count


def test_graph_csv_rejects_garbage(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("i,j,w_plus,w_minus,w\n0,1,1,1,1\n")
    with pytest.raises(ValueError):
        load_graph_csv(p)
    p.write_text("# nodes=2 lambda=1\ni,j,w\n")
    with pytest.raises(ValueError):
        load_graph_csv(p)
