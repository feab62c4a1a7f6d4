import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from micromacro.estimator import GraphVAE, check_graphs, check_positive
from micromacro.graphs import Graph, generate_lobster, relabel

SMALL = dict(n_max=12, gcn_dims=(8,), readout_dim=8, latent_dim=3, decoder_dims=(16,), epochs=3, batch_size=4)


@pytest.fixture(scope="module")
def graphs():
    return [generate_lobster(5, rng=i, min_nodes=6, max_nodes=12) for i in range(10)]


@pytest.fixture(scope="module")
def fitted(graphs):
    return GraphVAE(**SMALL).fit(graphs)


def test_sklearn_params_round_trip():
    est = GraphVAE(**SMALL, gamma=0)
    assert est.get_params()["gamma"] == 0
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()
    assert est.set_params(beta=2.0).beta == 2.0


def test_fit_transform(fitted, graphs):
    z = fitted.transform(graphs)
    assert z.shape == (10, 3) and np.all(np.isfinite(z))
    assert fitted.n_max_ == 12 and len(fitted.log_.records) == 3
    # posterior means do not depend on the input node labels
    g = graphs[0]
    h = relabel(g, np.random.default_rng(0).permutation(g.n))
    np.testing.assert_allclose(fitted.transform([g]), fitted.transform([h]), atol=1e-9)


def test_fit_with_validation_uses_best(graphs):
    est = GraphVAE(**dict(SMALL, val_every=1)).fit(graphs[:8], validation=graphs[8:])
    assert any("val_loss" in r for r in est.log_.records)


def test_accepts_arrays(graphs):
    est = GraphVAE(**SMALL).fit([g.adjacency for g in graphs])
    assert est.transform([graphs[0].adjacency]).shape == (1, 3)


def test_sample(fitted):
    a = fitted.sample(4, random_state=1)
    b = fitted.sample(4, random_state=1)
    assert len(a) == 4 and all(isinstance(g, Graph) for g in a)
    assert all(x.same_structure(y) for x, y in zip(a, b))
    assert all(g.n <= 12 for g in fitted.sample(3, mode="threshold"))


def test_save_load(fitted, graphs, tmp_path):
    fitted.save(tmp_path / "m.ckpt")
    est = GraphVAE.load(tmp_path / "m.ckpt")
    assert est.latent_dim == 3 and est.gcn_dims == (8,)
    np.testing.assert_array_equal(est.transform(graphs), fitted.transform(graphs))


def test_errors(fitted, graphs):
    with pytest.raises(NotFittedError):
        GraphVAE().transform(graphs)
    with pytest.raises(ValueError, match="exceeds n_max"):
        fitted.transform([generate_lobster(12, rng=0, min_nodes=20, max_nodes=30)])
    with pytest.raises(ValueError, match="lr"):
        GraphVAE(**dict(SMALL, lr=0)).fit(graphs)
    with pytest.raises(ValueError, match="n_samples"):
        fitted.sample(0)


def test_check_graphs():
    with pytest.raises(TypeError):
        check_graphs(Graph(np.zeros((2, 2))))
    with pytest.raises(ValueError, match="square"):
        check_graphs([np.zeros((2, 3))])
    with pytest.raises(ValueError, match="at least"):
        check_graphs([])
    assert check_positive(0, "x", allow_zero=True) == 0
    with pytest.raises(ValueError):
        check_positive(0, "x")
