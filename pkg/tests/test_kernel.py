import math

import numpy as np
import pytest

from dynjoint.errors import FactorizationFailure
from dynjoint.kernel import (
    CovMatrix,
    KernelParams,
    build_cov,
    gp_condition,
    kappa_base,
    kappa_recursive,
    kernel_matrix,
    sample_mvn,
    time_grid,
)

P = KernelParams(0.01, 0.4, 1)


def one_layer_closed_form(t, s, c, g):
    """Scalar one-hidden-layer ReLU kernel written out from scratch."""
    k_tt = c + g * t * t
    k_ss = c + g * s * s
    k_ts = c + g * t * s
    norm = math.sqrt(k_tt * k_ss)
    gamma = math.acos(max(-1.0, min(1.0, k_ts / norm)))
    return c + g * norm / (2 * math.pi) * (math.sin(gamma) + (math.pi - gamma) * math.cos(gamma))


@pytest.mark.parametrize("t, s, expected", [(1, 1, 0.41), (0, 5, 0.01), (1, 2, 0.81)])
def test_base_case_values(t, s, expected):
    assert kappa_base(t, s, P) == pytest.approx(expected, abs=1e-15)
    assert kappa_recursive(t, s, KernelParams(0.01, 0.4, 0)) == pytest.approx(expected, abs=1e-15)


def test_one_layer_diagonal():
    # gamma = 0 on the diagonal: K^h = 0.41 / 2
    assert kappa_recursive(1, 1, P) == pytest.approx(0.01 + 0.4 * 0.205, abs=1e-15)
    assert kappa_recursive(1, 1, P) == pytest.approx(0.092, abs=1e-15)


def test_depth_zero_is_base_case(rng):
    for _ in range(20):
        t = rng.uniform(-5, 5)
        p = KernelParams(rng.uniform(0.01, 1), rng.uniform(0.01, 1), 0)
        assert kappa_recursive(t, t, p) == kappa_base(t, t, p)


def test_one_layer_matches_closed_form(rng):
    assert kappa_recursive(1, 2, P) == pytest.approx(one_layer_closed_form(1, 2, 0.01, 0.4), abs=1e-12)
    for _ in range(500):
        t, s = rng.uniform(-20, 20, 2)
        c, g = rng.uniform(0.001, 2, 2)
        p = KernelParams(c, g, 1)
        assert abs(kappa_recursive(t, s, p) - one_layer_closed_form(t, s, c, g)) < 1e-12


def test_one_layer_matches_relu_expectation():
    # Monte Carlo: c + g E[relu(u) relu(v)] with (u, v) Gaussian under the base kernel
    rng = np.random.default_rng(3)
    t, s, c, g = 1.0, -2.0, 0.3, 0.5
    cov = np.array([[c + g * t * t, c + g * t * s], [c + g * t * s, c + g * s * s]])
    uv = rng.multivariate_normal(np.zeros(2), cov, size=2_000_000)
    prod = np.maximum(uv[:, 0], 0) * np.maximum(uv[:, 1], 0)
    se = g * prod.std() / math.sqrt(prod.size)
    assert abs(c + g * prod.mean() - kappa_recursive(t, s, KernelParams(c, g, 1))) < 4 * se


def test_kernel_matrix_entries_and_symmetry(rng):
    times = np.sort(rng.uniform(0, 10, 7))
    p = KernelParams(0.2, 0.3, 3)
    K = kernel_matrix(times, times, p)
    naive = np.array([[kappa_recursive(a, b, p) for b in times] for a in times])
    np.testing.assert_allclose(K, naive, rtol=1e-13, atol=0)
    np.testing.assert_allclose(K, K.T, rtol=1e-12, atol=0)


def test_not_stationary():
    # same lag, different location: a stationary kernel would agree
    assert kappa_recursive(1, 2, P) != pytest.approx(kappa_recursive(5, 6, P), rel=1e-3)


def test_single_point_grid():
    cov = build_cov([1.0], P, 0.0)
    assert cov.values.shape == (1, 1)
    assert cov.values[0, 0] == kappa_recursive(1, 1, P)


def test_small_grid_psd():
    cov = build_cov([1, 2, 3], KernelParams(0.05, 0.05, 1), 1e-8)
    assert np.linalg.eigvalsh(cov.values).min() >= -1e-8 * np.trace(cov.values) / 3


def test_grid_order_irrelevant():
    a = kernel_matrix([1, 2], [1, 2], P)
    b = kernel_matrix(np.sort([2, 1]), np.sort([2, 1]), P)
    np.testing.assert_array_equal(a, b)


def test_random_covariances_psd():
    rng = np.random.default_rng(2)
    for _ in range(200):
        T = int(rng.integers(1, 31))
        grid = np.sort(rng.choice(np.arange(1, 200) * 0.25, T, replace=False))
        p = KernelParams(rng.uniform(1e-3, 1), rng.uniform(1e-3, 1), int(rng.integers(0, 4)))
        cov = build_cov(grid, p, 1e-8)
        vals = np.linalg.eigvalsh(cov.values)
        assert vals.min() >= -1e-8 * np.trace(cov.values) / T


def test_time_grid_validation():
    with pytest.raises(ValueError):
        time_grid([])
    with pytest.raises(ValueError):
        time_grid([1, 1])
    with pytest.raises(ValueError):
        time_grid([1, np.inf])
    with pytest.raises(ValueError):
        KernelParams(0.0, 1.0)
    with pytest.raises(ValueError):
        KernelParams(1.0, 1.0, -1)


def test_build_cov_escalates_jitter():
    # depth-0 kernel on many points is rank 2, so it needs jitter
    cov = build_cov(np.arange(1, 21.0), KernelParams(0.01, 0.4, 0), 0.0)
    assert cov.jitter > 0
    np.linalg.cholesky(cov.values)


def test_build_cov_failure_raises(monkeypatch):
    import dynjoint.kernel as kmod
    monkeypatch.setattr(kmod, "JITTER_LADDER", (1e-30,))
    with pytest.raises(FactorizationFailure):
        build_cov(np.arange(1, 21.0), KernelParams(0.01, 0.4, 0), 0.0)


def test_sample_mvn_moments():
    rng = np.random.default_rng(5)
    n, d = 100_000, 3
    draws = sample_mvn(np.zeros((n, d)), np.eye(d), rng)
    se = 1 / math.sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0)) < 3 * se)
    emp = draws.T @ draws / n
    # var of a product of unit normals is 1 (off-diagonal) or 2 (diagonal)
    se_cov = np.where(np.eye(d) > 0, math.sqrt(2), 1.0) * se
    assert np.all(np.abs(emp - np.eye(d)) < 3 * se_cov)


def test_sample_mvn_degenerate():
    jit = 1e-12
    m = np.array([1.0, -2.0, 3.0])
    x = sample_mvn(m, np.zeros((3, 3)) + jit * np.eye(3), np.random.default_rng(0))
    assert np.all(np.abs(x - m) < math.sqrt(jit) * 10)


def test_sample_mvn_deterministic():
    cov = build_cov([1, 2, 3], P, 1e-8)
    a = sample_mvn(np.zeros(3), cov, np.random.default_rng(9))
    b = sample_mvn(np.zeros(3), cov, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_gp_condition_interpolates():
    # the error scales like jitter / smallest eigenvalue, so use a well-conditioned grid
    grid = np.array([-3.0, -1.0, 0.0, 2.0, 4.0])
    y = np.array([0.3, -0.2, 0.5, 1.0, 0.1])
    mean, cov = gp_condition(grid, y, [-1.0, 2.0], KernelParams(0.5, 1.0, 2), jitter=1e-10)
    np.testing.assert_allclose(mean, y[[1, 3]], atol=1e-6)
    assert np.all(np.diag(cov.values) <= 1e-6)


def test_gp_condition_zero_data():
    mean, _ = gp_condition([1, 2, 3], np.zeros(3), [3.5, 7.0], P)
    assert np.all(mean == 0.0)


def test_gp_condition_scalar_formula():
    jit = 1e-3
    mean, cov = gp_condition([2.0], [1.7], [5.0], P, jitter=jit)
    k12 = kappa_recursive(5.0, 2.0, P)
    k11 = kappa_recursive(2.0, 2.0, P)
    k22 = kappa_recursive(5.0, 5.0, P)
    assert mean[0] == pytest.approx(k12 / (k11 + jit) * 1.7, abs=1e-10)
    assert cov.values[0, 0] == pytest.approx(k22 - k12**2 / (k11 + jit), abs=1e-10)
    assert isinstance(cov, CovMatrix)
