import numpy as np
import pytest

from dynjoint.errors import IndexOutOfRange
from dynjoint.model import (
    UNKNOWN,
    AttributeSeries,
    ModelConfig,
    MultiplexGraphSeries,
    attribute_loglik_terms,
    attribute_mean,
    edge_linear_predictor,
    edge_loglik_terms,
    log_posterior_unnorm,
    prior_factor,
)

from conftest import random_state, tiny_problem


@pytest.fixture
def problem():
    graph, attrs, config = tiny_problem(seed=3, J=4)
    return graph, attrs, config, random_state(graph, attrs, config, seed=4)


def test_graph_accessors_mirror():
    graph, _, _ = tiny_problem(seed=0, J=4, hide=0.0)
    for l in range(2):
        for t in range(4):
            for j in range(4):
                for k in range(j + 1, 4):
                    assert graph.edge(j, k, l, t) == graph.edge(k, j, l, t)
    with pytest.raises(IndexOutOfRange):
        graph.edge(1, 1, 0, 0)
    with pytest.raises(IndexOutOfRange):
        graph.edge(0, 1, 2, 0)


def test_graph_unknown_sentinel():
    grid = [1.0]
    adj = np.zeros((1, 1, 3, 3), np.int8)
    mask = np.zeros((1, 1, 3, 3), bool)
    mask[0, 0, 0, 1] = True
    g = MultiplexGraphSeries.from_dense(grid, adj, mask)
    assert g.edge(0, 1, 0, 0) == 0
    assert g.edge(0, 2, 0, 0) is None
    assert g.edges[0, 0, 0, 2] == UNKNOWN
    assert g.num_observed() == 1


def test_graph_rejects_bad_arrays():
    with pytest.raises(ValueError):
        MultiplexGraphSeries([1.0], np.zeros((1, 1, 2, 2)), np.ones((1, 1, 2, 2), bool))
    asym = np.full((1, 1, 2, 2), UNKNOWN)
    asym[0, 0, 0, 1] = 1
    m = np.zeros((1, 1, 2, 2), bool)
    m[0, 0, 0, 1] = True
    with pytest.raises(ValueError):
        MultiplexGraphSeries([1.0], asym, m)


def test_attribute_series_validation():
    vals = np.ones((2, 1, 2))
    vals[0, 0, 0] = np.nan
    mask = np.ones((2, 1, 2), bool)
    with pytest.raises(ValueError):
        AttributeSeries([1.0, 2.0], vals, mask)
    mask[0, 0, 0] = False
    a = AttributeSeries([1.0, 2.0], vals, mask)
    assert a.filled()[0, 0, 0] == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(layer_rank=0)
    with pytest.raises(ValueError):
        ModelConfig(hyper_grid=())
    assert len(ModelConfig().hyper_grid) == 100


def test_linear_predictor_examples(problem):
    graph, attrs, config, state = problem
    zero = state.copy()
    for name in ("mu", "zeta", "xi"):
        getattr(zero, name)[:] = 0.0
    assert edge_linear_predictor(zero, 0, 1, 0, 0) == 0.0
    zero.zeta[0, 0, 0] = zero.zeta[1, 0, 0] = 1.0
    assert edge_linear_predictor(zero, 0, 1, 0, 0) == 1.0
    with pytest.raises(IndexOutOfRange):
        edge_linear_predictor(state, 0, 0, 0, 0)


def test_linear_predictor_naive(problem):
    _, _, _, s = problem
    J, L, R, T = s.xi.shape
    for l in range(L):
        for t in range(T):
            for j in range(J):
                for k in range(J):
                    if j == k:
                        continue
                    v = s.mu[t]
                    for r in range(s.zeta.shape[1]):
                        v += s.zeta[j, r, t] * s.zeta[k, r, t]
                    for r in range(R):
                        v += s.xi[j, l, r, t] * s.xi[k, l, r, t]
                    assert abs(edge_linear_predictor(s, j, k, l, t) - v) < 1e-12


def test_attribute_mean_examples(problem):
    _, _, _, s = problem
    z = s.copy()
    z.xi[:] = 0.0
    assert attribute_mean(z, 2, 1, 3) == z.eta[1, 3]
    z.eta[:] = 0.0
    z.xi[0, 0, 0, 0] = 1.0
    z.alpha[1, 0, 0, 0] = 1.0
    assert attribute_mean(z, 0, 1, 0) == 1.0
    J, L, R, T = s.xi.shape
    for j in range(J):
        for k in range(s.eta.shape[0]):
            for t in range(T):
                v = s.eta[k, t]
                for l in range(L):
                    for r in range(R):
                        v += s.xi[j, l, r, t] * s.alpha[k, l, r, t]
                assert abs(attribute_mean(s, j, k, t) - v) < 1e-12
    with pytest.raises(IndexOutOfRange):
        attribute_mean(s, J, 0, 0)


def test_mu_quadratic_slice(problem):
    graph, attrs, config, s = problem
    base = log_posterior_unnorm(s, graph, attrs, config)
    prec = prior_factor(graph.grid, s.beta["mu"], config.jitter)[2]
    t = 2
    up = np.triu(np.ones((4, 4), bool), 1)
    keep = graph.mask[:, t] & up
    kappa = graph.signed_response()[:, t][keep]
    omega = s.omega[:, t][keep]
    psi = np.array([[edge_linear_predictor(s, j, k, l, t) if j != k else 0.0 for k in range(4)] for l in range(2)
                    for j in range(4)]).reshape(2, 4, 4)[keep]
    for delta in (0.1, -0.7, 2.5):
        moved = s.copy()
        moved.mu[t] += delta
        got = log_posterior_unnorm(moved, graph, attrs, config) - base
        lin = np.sum(kappa - omega * psi) - (prec @ s.mu)[t]
        quad = -0.5 * (np.sum(omega) + prec[t, t])
        assert got == pytest.approx(lin * delta + quad * delta**2, rel=1e-8)


def test_duplicated_layer_doubles_edge_term(problem):
    graph, attrs, config, s = problem
    one = MultiplexGraphSeries(graph.grid, graph.edges[:1], graph.mask[:1])
    two = MultiplexGraphSeries(graph.grid, np.concatenate([graph.edges[:1]] * 2),
                               np.concatenate([graph.mask[:1]] * 2))
    s1 = s.copy()
    s1.xi = s.xi[:, :1].copy()
    s1.omega = s.omega[:1].copy()
    s2 = s.copy()
    s2.xi = np.concatenate([s1.xi] * 2, axis=1)
    s2.omega = np.concatenate([s1.omega] * 2)
    a = edge_loglik_terms(s1, one).sum()
    terms = edge_loglik_terms(s2, two)
    np.testing.assert_array_equal(terms[0], terms[1])
    assert terms[0].sum() + terms[1].sum() == 2 * a


def test_zero_state_kills_edge_terms(problem):
    graph, attrs, config, s = problem
    z = s.copy()
    for name in ("mu", "zeta", "xi"):
        getattr(z, name)[:] = 0.0
    assert np.all(edge_loglik_terms(z, graph) == 0.0)
    total = log_posterior_unnorm(z, graph, attrs, config)
    # remaining terms: attributes, priors, sigma2
    rest = attribute_loglik_terms(z, attrs).sum()
    assert np.isfinite(total) and np.isfinite(rest)
