import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from micromacro.evaluation import (MetricReport, ReferenceGNN, evaluate, gnn_embed, ideal_split_score,
                                   median_bandwidth, mmd2_tv, mmd_rbf, precision_recall_f1, stat_mmd_report,
                                   tv_distance)
from micromacro.graphs import from_edges, generate_grid, generate_lobster, perturb_edges, relabel


@pytest.fixture(scope="module")
def lobsters():
    rng = np.random.default_rng(0)
    return [generate_lobster(12, rng=rng, min_nodes=10, max_nodes=30) for _ in range(30)]


# ---------------------------------------------------------------------------
# TV kernel

def test_tv_examples():
    assert tv_distance([0.2, 0.8], [0.2, 0.8]) == 0
    assert tv_distance([1, 0], [0, 1]) == 1
    assert tv_distance([0.5, 0.5], [1, 0]) == 0.5
    assert tv_distance([2, 2], [1]) == 0.5  # normalized and zero-padded
    with pytest.raises(ValueError):
        tv_distance([0, 0], [1])


def test_mmd2_tv_singleton_closed_form():
    t = tv_distance([0.5, 0.5], [1, 0])
    assert mmd2_tv([[0.5, 0.5]], [[1, 0]]) == pytest.approx(2 - 2 * math.exp(-t / 2))


@given(st.integers(0, 2**31))
def test_mmd2_tv_axioms(seed):
    rng = np.random.default_rng(seed)
    x = [rng.random(int(rng.integers(1, 6))) + 0.01 for _ in range(4)]
    y = [rng.random(int(rng.integers(1, 6))) + 0.01 for _ in range(3)]
    assert abs(mmd2_tv(x, x)) <= 1e-12
    assert mmd2_tv(x, y) == pytest.approx(mmd2_tv(y, x), abs=1e-15)
    assert mmd2_tv(x, y) >= -1e-12


def test_mmd2_tv_empty():
    with pytest.raises(ValueError):
        mmd2_tv([], [[1.0]])


def test_stat_mmd_self_and_paths_vs_stars():
    paths = [from_edges(10, [(i, i + 1) for i in range(9)])] * 100
    stars = [from_edges(10, [(0, i) for i in range(1, 10)])] * 100
    assert all(abs(v) <= 1e-12 for v in stat_mmd_report(paths, paths).values())
    assert stat_mmd_report(paths, stars)["degree"] > 0.5


# ---------------------------------------------------------------------------
# reference GNN

def test_gnn_is_seeded_and_frozen():
    g = generate_grid(3, 4)
    a, b = ReferenceGNN(random_state=3).fit(), ReferenceGNN(random_state=3).fit()
    np.testing.assert_array_equal(a.transform([g]), b.transform([g]))
    assert not np.array_equal(a.transform([g]), ReferenceGNN(random_state=4).fit().transform([g]))
    with pytest.raises(ValueError):
        a.weights_[0][0][0, 0] = 1.0


def test_gnn_shapes_and_embed_helper():
    gnn = ReferenceGNN(rounds=2, hidden=5)
    e = gnn_embed(gnn, generate_grid(2, 3))
    assert e.shape == (2 * 2 * 5,) and gnn.n_features_out_ == 20
    assert gnn.transform([]).shape == (0, 20)
    with pytest.raises(ValueError):
        ReferenceGNN(rounds=0).fit()


def test_gnn_readout_structure():
    # round-1 mean and sum of a k-regular graph: identical node states
    gnn = ReferenceGNN(rounds=1, hidden=3).fit()
    cycle = from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
    e = gnn.transform([cycle])[0]
    np.testing.assert_allclose(e[3:], 6 * e[:3])


@given(st.integers(0, 2**31))
def test_gnn_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    g = generate_lobster(6, rng=rng, min_nodes=6, max_nodes=20)
    gnn = ReferenceGNN().fit()
    h = relabel(g, rng.permutation(g.n))
    np.testing.assert_allclose(gnn.transform([g]), gnn.transform([h]), rtol=1e-12)


# ---------------------------------------------------------------------------
# RBF and precision / recall

def test_mmd_rbf_axioms():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((10, 4)), rng.standard_normal((8, 4)) + 1
    assert abs(mmd_rbf(x, x)) <= 1e-12
    assert mmd_rbf(x, y) == pytest.approx(mmd_rbf(y, x), abs=1e-15)
    assert mmd_rbf(x, y) > 0
    with pytest.raises(ValueError):
        mmd_rbf(x, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        mmd_rbf(np.zeros((0, 4)), x)


def test_median_bandwidth_floor():
    same = np.ones((4, 3))
    assert median_bandwidth(same, same) == 1e-6
    assert mmd_rbf(same, same) == 0.0


def test_mmd_rbf_against_explicit_sum():
    rng = np.random.default_rng(1)
    x, y = rng.standard_normal((3, 2)), rng.standard_normal((4, 2))
    bw = 0.7

    def k(a, b):
        return math.exp(-np.sum((a - b) ** 2) / (2 * bw ** 2))

    expected = (sum(k(a, b) for a in x for b in x) / 9 + sum(k(a, b) for a in y for b in y) / 16
                - 2 * sum(k(a, b) for a in x for b in y) / 12)
    assert mmd_rbf(x, y, bw) == pytest.approx(expected, rel=1e-12)


def test_precision_recall_examples():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((12, 3))
    assert precision_recall_f1(x, x) == (100.0, 100.0, 100.0)
    assert precision_recall_f1(x, x + 1e3) == (0.0, 0.0, 0.0)
    y = rng.standard_normal((9, 3)) * 2
    p, r, f = precision_recall_f1(x, y)
    p2, r2, f2 = precision_recall_f1(y, x)
    assert (p, r) == (r2, p2) and f == pytest.approx(f2)
    with pytest.raises(ValueError, match="k=5"):
        precision_recall_f1(x[:5], x)


def test_precision_uses_inclusive_radius():
    test = np.arange(7.0)[:, None]
    # k-th neighbour radius of the end points is exactly 5
    p, _, _ = precision_recall_f1(np.array([[-5.0]] * 6), test)
    assert p == 100.0


# ---------------------------------------------------------------------------
# reports

def test_evaluate_self_is_ideal(lobsters):
    rep = evaluate(lobsters, lobsters, gnn_seed=2)
    assert all(abs(v) <= 1e-12 for v in rep.stat_mmd.values())
    assert abs(rep.mmd_rbf) <= 1e-12 and rep.f1 == 100.0
    assert rep.config["gnn_seed"] == 2 and rep.config["k"] == 5
    assert {"rbf_bandwidth", "tv_bandwidth", "clustering_bins", "spectrum_bins"} <= set(rep.config)
    assert rep.n_generated == rep.n_test == 30


def test_metrics_are_relabel_invariant(lobsters):
    rng = np.random.default_rng(5)
    shuffled = [relabel(g, rng.permutation(g.n)) for g in lobsters]
    gen = [perturb_edges(g, 0.05, i) for i, g in enumerate(lobsters[:15])]
    a, b = evaluate(gen, lobsters), evaluate(gen, shuffled)
    for key in ("degree", "clustering", "spectrum", "diameter", "mmd_rbf", "precision", "recall", "f1"):
        assert getattr(a, key) == pytest.approx(getattr(b, key), rel=1e-9, abs=1e-12)


def test_perturbation_monotone(lobsters):
    gnn = ReferenceGNN().fit()
    test = gnn.transform(lobsters)
    vals = [mmd_rbf(gnn.transform([perturb_edges(g, r, i) for i, g in enumerate(lobsters)]), test)
            for r in (0.0, 0.05, 0.2)]
    assert vals[0] < vals[1] < vals[2]


def test_ideal_split(lobsters):
    a = ideal_split_score(lobsters, rng=1)
    b = ideal_split_score(lobsters, rng=1)
    assert a.to_dict() == b.to_dict()
    assert a.n_generated == a.n_test == 15 and a.config["split"] == "50/50"
    with pytest.raises(ValueError):
        ideal_split_score(lobsters[:11])


def test_report_json_round_trip(lobsters, tmp_path):
    rep = evaluate(lobsters[:10], lobsters[10:20])
    text = rep.to_json(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == json.loads(text)
    assert MetricReport.from_json(text).to_dict() == rep.to_dict()


def test_report_validation():
    base = dict(degree=0, clustering=0, spectrum=0, diameter=0, mmd_rbf=0, precision=0, recall=0, f1=0,
                n_generated=1, n_test=1)
    with pytest.raises(ValueError):
        MetricReport(**dict(base, degree=-1e-6))
    with pytest.raises(ValueError):
        MetricReport(**dict(base, f1=101))
    MetricReport(**dict(base, spectrum=-1e-13))
