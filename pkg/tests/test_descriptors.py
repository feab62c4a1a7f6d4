import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from micromacro import tensor as T
from micromacro.descriptors import (DescriptorSet, DescriptorSpec, brute_force_triangles, clustering_coefficients,
                                    degree_histogram, descriptor_eval, diameter, hard_stats,
                                    normalized_laplacian_spectrum, soft_degree_histogram, transition_matrix,
                                    transition_powers, triangle_count)
from micromacro.graphs import from_edges, generate_grid, generate_lobster, generate_triangle_grid, pad_to, to_networkx

from conftest import random_graph, random_soft

seeds = st.integers(0, 2**31)


def soft_hist_loop(a, n_bins, slope):
    d = a.sum(axis=1)
    h = np.zeros(n_bins)
    for di in d:
        for b in range(n_bins):
            h[b] += max(0.0, 1.0 - slope * abs(di - b))
    return h


# ---------------------------------------------------------------------------
# soft statistics vs loop oracles

@given(seeds, st.integers(1, 10), st.floats(0.05, 2.0))
def test_soft_histogram_matches_loop(seed, n, slope):
    a = random_soft(n, np.random.default_rng(seed))
    np.testing.assert_allclose(soft_degree_histogram(a, n + 1, slope).value, soft_hist_loop(a, n + 1, slope),
                               atol=1e-12)


def test_soft_histogram_hard_graph_slope_one_is_exact_histogram():
    g = generate_grid(3, 3)
    h = soft_degree_histogram(g.adjacency, 6, slope=1.0).value
    np.testing.assert_array_equal(h, np.bincount(g.degrees(), minlength=6))


def test_soft_histogram_mass_is_conserved_for_wide_bins():
    # with slope 1 and degrees inside the bin range each node contributes 1
    a = random_soft(6, np.random.default_rng(0))
    assert soft_degree_histogram(a, 7, slope=1.0).value.sum() == pytest.approx(6.0)


def test_soft_histogram_argument_checks():
    with pytest.raises(ValueError):
        soft_degree_histogram(np.zeros((2, 2)), 3, slope=0.0)
    with pytest.raises(ValueError):
        soft_degree_histogram(np.zeros((2, 2)), 0)


@given(seeds, st.integers(2, 10), st.integers(1, 5))
def test_transition_rows_sum_to_one(seed, n, s):
    a = random_soft(n, np.random.default_rng(seed))
    p = transition_matrix(a, s).value
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p >= 0)


@given(seeds, st.integers(2, 8))
def test_transition_powers_match_matrix_power(seed, n):
    a = random_soft(n, np.random.default_rng(seed))
    p1 = a / a.sum(axis=1, keepdims=True)
    for s, ps in enumerate(transition_powers(a, 5), start=1):
        np.testing.assert_allclose(ps.value, np.linalg.matrix_power(p1, s), atol=1e-12)


def test_transition_isolated_node_row_is_zero():
    g = from_edges(3, [(0, 1)])
    p = transition_matrix(g.adjacency, 2).value
    np.testing.assert_array_equal(p[2], 0.0)
    assert np.all(np.isfinite(p))


def test_transition_monte_carlo_small():
    rng = np.random.default_rng(0)
    g = generate_lobster(4, rng=rng, min_nodes=6, max_nodes=8)
    p1 = g.adjacency / g.adjacency.sum(axis=1, keepdims=True)
    walks = 20000
    est = np.zeros((g.n, g.n))
    for i in range(g.n):
        pos = np.full(walks, i)
        for _ in range(3):
            u = rng.random(walks)
            pos = (np.cumsum(p1[pos], axis=1) < u[:, None]).sum(axis=1)
        est[i] = np.bincount(pos, minlength=g.n) / walks
    assert np.abs(est - transition_matrix(g.adjacency, 3).value).max() < 0.03


@given(seeds, st.integers(1, 12), st.floats(0, 1))
def test_triangle_count_equals_six_times_brute_force(seed, n, p):
    g = random_graph(n, p, np.random.default_rng(seed))
    assert triangle_count(g.adjacency).value == 6 * brute_force_triangles(g)


def test_triangle_count_examples():
    assert triangle_count(generate_grid(4, 4).adjacency).value == 0
    assert triangle_count(generate_triangle_grid(3, 3).adjacency).value == 6 * 8
    assert triangle_count(np.ones((4, 4)) - np.eye(4)).value == 24


def test_brute_force_limit():
    with pytest.raises(ValueError):
        brute_force_triangles(generate_grid(9, 9))


# ---------------------------------------------------------------------------
# masking and batching

@given(seeds, st.integers(2, 8), st.integers(0, 4))
def test_padding_does_not_change_statistics(seed, n, extra):
    rng = np.random.default_rng(seed)
    g = random_graph(n, 0.5, rng)
    pg = pad_to(g, n + extra)
    # garbage in the padded block must be ignored under the mask
    a = pg.adjacency.copy()
    a[n:, :] = a[:, n:] = 0.7
    np.fill_diagonal(a[n:, n:], 0)
    h = soft_degree_histogram(a, n + 1, 0.1, pg.mask).value
    np.testing.assert_allclose(h, soft_degree_histogram(g.adjacency, n + 1).value, atol=1e-12)
    assert triangle_count(a, pg.mask).value == pytest.approx(triangle_count(g.adjacency).value, abs=1e-9)
    p = transition_matrix(a, 3, pg.mask).value
    np.testing.assert_allclose(p[:n, :n], transition_matrix(g.adjacency, 3).value, atol=1e-12)
    assert np.all(p[n:] == 0) and np.all(p[:, n:] == 0)


def test_batched_equals_individual():
    rng = np.random.default_rng(2)
    mats = np.stack([random_soft(5, rng) for _ in range(3)])
    dset = DescriptorSet.default(6)
    batched = descriptor_eval(dset, mats)
    for i in range(3):
        single = descriptor_eval(dset, mats[i])
        for b, s in zip(batched, single):
            np.testing.assert_allclose(b.value.value[i], s.value.value, atol=1e-12)


def test_descriptor_eval_dimensions_under_mask():
    pg = pad_to(generate_grid(2, 3), 9)
    vals = descriptor_eval(DescriptorSet.default(10), pg.adjacency[None], pg.mask[None])
    assert [v.spec.name for v in vals] == ["degree_histogram"] + [f"transition_{s}" for s in range(1, 6)] + [
        "triangle_count"]
    assert vals[0].dimension[0] == 10 and vals[1].dimension[0] == 36 and vals[-1].dimension[0] == 1
    assert vals[1].value.shape == (1, 81)


def test_descriptor_set_parsing():
    dset = DescriptorSet.from_names(["degree", "transition_3", "triangles"], 5)
    assert dset.names == ["degree_histogram", "transition_3", "triangle_count"]
    assert DescriptorSet.from_names(["default"], 5).names == DescriptorSet.default(5).names
    with pytest.raises(ValueError):
        DescriptorSpec.parse("wiener_index")
    with pytest.raises(ValueError):
        DescriptorSpec("transition", 0)
    with pytest.raises(ValueError):
        DescriptorSet([], 5)


# ---------------------------------------------------------------------------
# permutation properties

@given(seeds, st.integers(2, 10))
def test_permutation_invariance_and_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    a = random_soft(n, rng)
    perm = rng.permutation(n)
    pa = a[np.ix_(perm, perm)]
    np.testing.assert_allclose(soft_degree_histogram(pa, n + 1).value, soft_degree_histogram(a, n + 1).value,
                               atol=1e-12)
    assert abs(triangle_count(pa).value - triangle_count(a).value) <= 1e-12 * max(1.0, triangle_count(a).value)
    np.testing.assert_allclose(transition_matrix(pa, 3).value, transition_matrix(a, 3).value[np.ix_(perm, perm)],
                               atol=1e-12)


# ---------------------------------------------------------------------------
# hard statistics vs networkx

@pytest.mark.parametrize("make", [
    lambda: generate_grid(4, 5),
    lambda: generate_triangle_grid(4, 4),
    lambda: generate_lobster(12, rng=1, min_nodes=10, max_nodes=30),
    lambda: from_edges(5, [(0, 1), (1, 2), (2, 0), (3, 4)]),
])
def test_hard_statistics_match_networkx(make):
    g = make()
    G = to_networkx(g)
    np.testing.assert_allclose(clustering_coefficients(g), [nx.clustering(G, v) for v in range(g.n)], atol=1e-12)
    np.testing.assert_allclose(degree_histogram(g), np.array(nx.degree_histogram(G)) / g.n)
    np.testing.assert_allclose(normalized_laplacian_spectrum(g), np.sort(nx.normalized_laplacian_spectrum(G)),
                               atol=1e-8)
    expected = max(nx.diameter(G.subgraph(c)) for c in nx.connected_components(G))
    assert diameter(g) == expected


def test_hard_stats_shapes():
    g = generate_grid(3, 3)
    h = hard_stats(g)
    assert h["clustering"].shape == (100,) and h["spectrum"].shape == (200,)
    assert h["clustering"].sum() == 9 and h["spectrum"].sum() == 9
    assert h["diameter"].argmax() == 4 and h["diameter"].sum() == 1


def test_diameter_single_node():
    assert diameter(from_edges(1, [])) == 0


# ---------------------------------------------------------------------------
# worked examples

PATH3 = from_edges(3, [(0, 1), (1, 2)]).adjacency


def test_path_examples():
    np.testing.assert_allclose(soft_degree_histogram(PATH3, 4).value, [2.6, 2.9, 2.8, 2.5])
    np.testing.assert_allclose(transition_matrix(PATH3, 1).value, [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
    np.testing.assert_allclose(transition_matrix(PATH3, 2).value, [[0.5, 0, 0.5], [0, 1, 0], [0.5, 0, 0.5]])


def test_soft_degree_gradient_is_one():
    from micromacro.descriptors import soft_degree

    x = T.leaf(np.full((3, 3), 0.5))
    np.testing.assert_array_equal(T.reverse_grad(T.sum_(soft_degree(x)), wrt=[x])[x], 1.0)
    np.testing.assert_allclose(soft_degree(np.full((3, 3), 0.5) - 0.5 * np.eye(3)).value, [1, 1, 1])


def test_singleton_sets():
    k3 = np.ones((3, 3)) - np.eye(3)
    (v,) = descriptor_eval(DescriptorSet.from_names(["triangle_count"], 4), k3)
    assert v.value.value.tolist() == [6.0]
    assert len(descriptor_eval(DescriptorSet.from_names(["degree_histogram"], 4), k3)) == 1


def test_hard_stats_examples():
    k3 = from_edges(3, [(0, 1), (1, 2), (0, 2)])
    assert np.all(clustering_coefficients(k3) == 1) and diameter(k3) == 1
    p4 = from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert np.all(clustering_coefficients(p4) == 0) and diameter(p4) == 3
    np.testing.assert_allclose(normalized_laplacian_spectrum(from_edges(2, [(0, 1)])), [0, 2])


def test_brute_force_examples():
    assert brute_force_triangles(from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])) == 4
    assert brute_force_triangles(from_edges(5, [(i, (i + 1) % 5) for i in range(5)])) == 0
    assert brute_force_triangles(generate_triangle_grid(3, 3)) == 8
