import numpy as np

from dynjoint.diagnostics import autocorrelation, effective_sample_size


def ar1(rho, n, seed):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = rng.standard_normal() / np.sqrt(1 - rho**2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + rng.standard_normal()
    return x


def test_white_noise_ess_near_n():
    x = np.random.default_rng(0).standard_normal(20_000)
    assert abs(effective_sample_size(x) / x.size - 1) < 0.1


def test_ar1_ess_matches_theory():
    # integrated autocorrelation time of AR(1) is (1 + rho) / (1 - rho)
    for rho in (0.5, 0.9):
        x = ar1(rho, 50_000, 1)
        expected = x.size * (1 - rho) / (1 + rho)
        assert abs(effective_sample_size(x) / expected - 1) < 0.15


def test_autocorrelation_lag0_and_constant():
    x = ar1(0.7, 1000, 2)
    rho = autocorrelation(x)
    assert rho[0] == 1.0
    assert abs(rho[1] - 0.7) < 0.1
    assert effective_sample_size(np.ones(100)) == 100.0
