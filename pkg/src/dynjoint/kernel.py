"""Arc-cosine (ReLU) neural-network Gaussian-process kernel over time grids.

The depth-F kernel is the infinite-width limit of a ReLU network with a
single scalar input ``t``. Depth 0 is the linear kernel
``sigma_bias_sq + sigma_weight_sq * t * t'``; every extra layer applies the
arc-cosine map of order one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import FactorizationFailure

# relative jitter ladder used by build_cov when the requested jitter fails
JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
# relative ladder used by sample_mvn
MVN_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class KernelParams:
    sigma_bias_sq: float
    sigma_weight_sq: float
    depth: int = 1

    def __post_init__(self):
        if not (self.sigma_bias_sq > 0 and self.sigma_weight_sq > 0):
            raise ValueError("kernel variances must be positive")
        if int(self.depth) != self.depth or self.depth < 0:
            raise ValueError("depth must be a nonnegative integer")

    def with_variances(self, sigma_bias_sq, sigma_weight_sq):
        return KernelParams(float(sigma_bias_sq), float(sigma_weight_sq), self.depth)


def time_grid(times):
    """Validate and return a strictly increasing, finite, nonempty float array."""
    arr = np.array(times, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError("time grid must contain at least one point")
    if not np.all(np.isfinite(arr)):
        raise ValueError("time grid must be finite")
    if arr.size > 1 and not np.all(np.diff(arr) > 0):
        raise ValueError("time grid must be strictly increasing")
    arr.flags.writeable = False
    return arr


@dataclass
class CovMatrix:
    grid: np.ndarray
    values: np.ndarray
    jitter: float = 0.0
    _chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def chol(self):
        if self._chol is None:
            self._chol = cholesky_with_jitter(self.values, MVN_LADDER)[0]
        return self._chol


def kappa_base(t_i, t_j, params):
    return params.sigma_bias_sq + params.sigma_weight_sq * t_i * t_j


def _arccos_layer(k_ii, k_ij, k_jj, params):
    norm = np.sqrt(k_ii * k_jj)
    cos_g = np.clip(k_ij / norm, -1.0, 1.0)
    gamma = np.arccos(cos_g)
    k_h = norm * (np.sin(gamma) + (np.pi - gamma) * cos_g) / (2 * np.pi)
    return params.sigma_bias_sq + params.sigma_weight_sq * k_h


def kappa_recursive(t_i, t_j, params):
    """Depth-``params.depth`` arc-cosine kernel between two time stamps."""
    k_ii = kappa_base(t_i, t_i, params)
    k_jj = kappa_base(t_j, t_j, params)
    k_ij = kappa_base(t_i, t_j, params)
    for _ in range(params.depth):
        k_ij = _arccos_layer(k_ii, k_ij, k_jj, params)
        # gamma = 0 on the diagonal, so K^h reduces to k/2
        k_ii = params.sigma_bias_sq + params.sigma_weight_sq * k_ii / 2
        k_jj = params.sigma_bias_sq + params.sigma_weight_sq * k_jj / 2
    return float(k_ij)


def kernel_matrix(times_a, times_b, params):
    """Cross-covariance matrix ``K[i, j] = kappa(times_a[i], times_b[j])``."""
    a = np.asarray(times_a, dtype=np.float64).reshape(-1)
    b = np.asarray(times_b, dtype=np.float64).reshape(-1)
    k_aa = kappa_base(a, a, params)
    k_bb = kappa_base(b, b, params)
    k_ab = kappa_base(a[:, None], b[None, :], params)
    for _ in range(params.depth):
        k_ab = _arccos_layer(k_aa[:, None], k_ab, k_bb[None, :], params)
        k_aa = params.sigma_bias_sq + params.sigma_weight_sq * k_aa / 2
        k_bb = params.sigma_bias_sq + params.sigma_weight_sq * k_bb / 2
    return k_ab


def relative_jitter(values, rel):
    """Absolute jitter equal to ``rel`` times the mean diagonal (or ``rel`` if that is 0)."""
    scale = float(np.mean(np.diag(values))) if values.size else 0.0
    return rel * (scale if scale > 0 else 1.0)


def cholesky_with_jitter(values, ladder):
    """Lower Cholesky factor, escalating a relative diagonal jitter along ``ladder``.

    Returns ``(L, added)`` where ``added`` is the absolute jitter that worked.
    """
    n = values.shape[0]
    eye = np.eye(n)
    for rel in ladder:
        added = relative_jitter(values, rel) if rel > 0 else 0.0
        try:
            return np.linalg.cholesky(values + added * eye), added
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailure(
        f"{n}x{n} matrix not positive definite after jitter {ladder[-1]:g} x mean diagonal"
    )


def build_cov(grid, params, jitter=0.0):
    """Covariance matrix of the kernel on ``grid`` with ``jitter`` added to the diagonal.

    If the jittered matrix cannot be factorized, the jitter is escalated
    along a relative ladder (x10 steps up to 1e-4 of the mean diagonal)
    before raising :class:`FactorizationFailure`.
    """
    grid = time_grid(grid)
    k = kernel_matrix(grid, grid, params)
    k = 0.5 * (k + k.T)
    values = k + jitter * np.eye(len(grid))
    try:
        chol = np.linalg.cholesky(values)
        return CovMatrix(grid, values, jitter, chol)
    except np.linalg.LinAlgError:
        pass
    base = relative_jitter(k, 1.0)
    for rel in JITTER_LADDER:
        extra = max(jitter, rel * base)
        values = k + extra * np.eye(len(grid))
        try:
            chol = np.linalg.cholesky(values)
            return CovMatrix(grid, values, extra, chol)
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailure(
        f"kernel matrix on {len(grid)} points not factorizable (params={params})"
    )


def sample_mvn(mean, cov, rng):
    """Draw ``mean + L z`` with ``L`` a lower Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=np.float64)
    if isinstance(cov, CovMatrix):
        chol = cov.chol
    else:
        chol = cholesky_with_jitter(np.asarray(cov, dtype=np.float64), MVN_LADDER)[0]
    if chol.shape[0] != mean.shape[-1]:
        raise ValueError("mean length does not match covariance dimension")
    z = rng.standard_normal(mean.shape)
    return mean + z @ chol.T


def gp_condition(obs_grid, obs_values, new_times, params, jitter=0.0):
    """Conditional law of the zero-mean GP at ``new_times`` given values on ``obs_grid``.

    Returns ``(mean, CovMatrix)`` with
    ``mean = K_*^T (K + jitter I)^-1 y`` and
    ``cov = K_** - K_*^T (K + jitter I)^-1 K_*``.
    """
    obs_grid = time_grid(obs_grid)
    new_times = time_grid(new_times)
    y = np.asarray(obs_values, dtype=np.float64)
    if y.shape[-1] != len(obs_grid):
        raise ValueError("obs_values length must equal obs_grid length")
    gain, cond = conditioning_operator(obs_grid, new_times, params, jitter)
    return y @ gain.T, CovMatrix(new_times, cond, 0.0)


def conditioning_operator(obs_grid, new_times, params, jitter=0.0):
    """Gain matrix ``K_*^T (K + jitter I)^-1`` and conditional covariance.

    Shared by :func:`gp_condition` and the batched out-of-sample extension
    so both see identical linear algebra.
    """
    k = kernel_matrix(obs_grid, obs_grid, params)
    k = 0.5 * (k + k.T) + jitter * np.eye(len(obs_grid))
    chol, _ = cholesky_with_jitter(k, (0.0,) + JITTER_LADDER)
    k_star = kernel_matrix(obs_grid, new_times, params)
    k_ss = kernel_matrix(new_times, new_times, params)
    v = solve_triangular(chol, k_star, lower=True)
    gain = solve_triangular(chol.T, v, lower=False).T
    cond = k_ss - v.T @ v
    cond = 0.5 * (cond + cond.T)
    return gain, cond


def gaussian_logpdf_zero_mean(vectors, chol):
    """Log density of each row of ``vectors`` under N(0, L L^T)."""
    v = np.atleast_2d(vectors)
    n = chol.shape[0]
    w = solve_triangular(chol, v.T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (np.sum(w * w, axis=0) + logdet + n * math.log(2 * math.pi))
