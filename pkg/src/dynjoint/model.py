"""Data containers, latent state, and log-density evaluation for the joint model.

Array layout (internal contract):

* graph edges and masks: ``(L, T, J, J)``, symmetric in the last two axes,
  with a ``False`` diagonal in the mask;
* attributes: ``(J, m, T)``;
* every latent function keeps time as its last axis, so each T-length
  vector updated by the sampler is contiguous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import IndexOutOfRange
from .kernel import KernelParams, build_cov, relative_jitter, kernel_matrix, time_grid

UNKNOWN = -1
FAMILIES = ("mu", "eta", "zeta", "xi", "alpha")
DEFAULT_GRID_VALUES = tuple(round(0.01 * i, 2) for i in range(1, 11))


@dataclass(frozen=True, eq=False)
class MultiplexGraphSeries:
    """Binary undirected multiplex graph observed on a time grid.

    ``edges`` holds 0/1 where observed and ``UNKNOWN`` (-1) elsewhere. The
    diagonal is never observed. Both arrays are symmetric; the upper
    triangle ``j < j'`` is the canonical copy used for I/O.
    """

    grid: np.ndarray
    edges: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        grid = time_grid(self.grid)
        edges = np.asarray(self.edges, dtype=np.int8)
        mask = np.asarray(self.mask, dtype=bool)
        if edges.ndim != 4 or edges.shape[2] != edges.shape[3]:
            raise ValueError("edges must have shape (L, T, J, J)")
        if edges.shape != mask.shape or edges.shape[1] != grid.size:
            raise ValueError("edges, mask, and grid disagree on shape")
        jj = np.arange(edges.shape[2])
        if mask[:, :, jj, jj].any():
            raise ValueError("self-dyads cannot be observed")
        if not (np.array_equal(mask, mask.transpose(0, 1, 3, 2))
                and np.array_equal(edges, edges.transpose(0, 1, 3, 2))):
            raise ValueError("graph arrays must be symmetric")
        if np.any(mask & (edges != 0) & (edges != 1)) or np.any(~mask & (edges != UNKNOWN)):
            raise ValueError("observed edges must be 0/1 and unobserved cells UNKNOWN")
        edges.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_dense(cls, grid, adjacency, mask=None):
        """Build from an ``(L, T, J, J)`` 0/1 array; only the upper triangle is read."""
        adjacency = np.asarray(adjacency)
        L, T, J, _ = adjacency.shape
        iu = np.triu_indices(J, 1)
        up = np.zeros((J, J), dtype=bool)
        up[iu] = True
        if mask is None:
            m = np.broadcast_to(up, adjacency.shape).copy()
        else:
            m = np.asarray(mask, dtype=bool) & up
        m = m | m.transpose(0, 1, 3, 2)
        a = np.where(up, adjacency, 0)
        a = a + a.transpose(0, 1, 3, 2)
        edges = np.where(m, a, UNKNOWN).astype(np.int8)
        return cls(grid, edges, m)

    @property
    def num_layers(self):
        return self.edges.shape[0]

    @property
    def num_times(self):
        return self.edges.shape[1]

    @property
    def num_nodes(self):
        return self.edges.shape[2]

    def edge(self, j, jp, layer, t_idx):
        """Edge value at a dyad, or ``None`` when unobserved."""
        self._check(j, jp, layer, t_idx)
        if not self.mask[layer, t_idx, j, jp]:
            return None
        return int(self.edges[layer, t_idx, j, jp])

    def _check(self, j, jp, layer, t_idx):
        J = self.num_nodes
        if not (0 <= j < J and 0 <= jp < J and j != jp):
            raise IndexOutOfRange(f"invalid dyad ({j}, {jp})")
        if not (0 <= layer < self.num_layers and 0 <= t_idx < self.num_times):
            raise IndexOutOfRange(f"invalid layer/time ({layer}, {t_idx})")

    def observed_cells(self):
        """``(l, t, j, j')`` index arrays of observed upper-triangle cells."""
        l, t, j, jp = np.nonzero(np.triu(np.ones(self.mask.shape[2:], bool), 1) & self.mask)
        return l, t, j, jp

    def hidden_cells(self):
        J = self.num_nodes
        up = np.triu(np.ones((J, J), bool), 1)
        return np.nonzero(up & ~self.mask)

    def num_observed(self):
        return int(np.triu(self.mask, 1).sum())

    def signed_response(self):
        """``(a - 0.5)`` on observed cells and 0 elsewhere (the PG kappa)."""
        return np.where(self.mask, self.edges - 0.5, 0.0)


@dataclass(frozen=True, eq=False)
class AttributeSeries:
    grid: np.ndarray
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        grid = time_grid(self.grid)
        values = np.array(self.values, dtype=np.float64)
        mask = np.array(self.mask, dtype=bool)
        if values.ndim != 3 or values.shape != mask.shape or values.shape[2] != grid.size:
            raise ValueError("attribute values and mask must have shape (J, m, T)")
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("observed attribute values must be finite")
        values = np.where(mask, values, np.nan)
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def num_nodes(self):
        return self.values.shape[0]

    @property
    def num_attrs(self):
        return self.values.shape[1]

    def filled(self):
        """Values with unobserved cells set to zero (safe for masked sums)."""
        return np.where(self.mask, self.values, 0.0)


@dataclass(frozen=True)
class ModelConfig:
    shared_rank: int = 4
    layer_rank: int = 4
    depth: int = 1
    hyper_grid: tuple = tuple((c, g) for g in DEFAULT_GRID_VALUES for c in DEFAULT_GRID_VALUES)
    a_sigma: float = 0.01
    b_sigma: float = 0.01
    jitter: float = 1e-8
    burn_in: int = 5000
    keep: int = 10000
    thin: int = 1
    seed: int = 0
    joint_mode: bool = True
    init_beta: tuple = (0.05, 0.05)

    def __post_init__(self):
        if self.shared_rank < 1 or self.layer_rank < 1:
            raise ValueError("ranks must be >= 1")
        if self.depth < 0 or self.burn_in < 0 or self.keep < 1 or self.thin < 1:
            raise ValueError("depth/burn_in must be >= 0, keep/thin >= 1")
        if not self.hyper_grid:
            raise ValueError("hyper_grid must be nonempty")
        if self.a_sigma <= 0 or self.b_sigma <= 0 or self.jitter < 0:
            raise ValueError("a_sigma, b_sigma must be > 0 and jitter >= 0")
        grid = tuple((float(c), float(g)) for c, g in self.hyper_grid)
        object.__setattr__(self, "hyper_grid", grid)
        object.__setattr__(self, "init_beta", tuple(float(v) for v in self.init_beta))

    def kernel(self, pair):
        return KernelParams(pair[0], pair[1], self.depth)


@dataclass
class LatentState:
    """One configuration of every unknown in the model.

    ``xi_attr`` is only populated in the marginal (non-joint) ablation,
    where the attribute model carries its own copy of the layer factors.
    """

    mu: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    alpha: np.ndarray
    sigma2: np.ndarray
    omega: np.ndarray
    beta: dict
    xi_attr: np.ndarray | None = None

    def copy(self):
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in kw.items():
            if isinstance(v, np.ndarray):
                kw[k] = v.copy()
        kw["beta"] = dict(self.beta)
        return LatentState(**kw)

    @property
    def attr_factors(self):
        """Layer factors driving the attribute model."""
        return self.xi if self.xi_attr is None else self.xi_attr


def edge_linear_predictor(state, j, jp, layer, t_idx):
    J = state.zeta.shape[0]
    if not (0 <= j < J and 0 <= jp < J) or j == jp:
        raise IndexOutOfRange(f"invalid dyad ({j}, {jp})")
    if not (0 <= layer < state.xi.shape[1] and 0 <= t_idx < state.mu.shape[0]):
        raise IndexOutOfRange(f"invalid layer/time ({layer}, {t_idx})")
    return float(state.mu[t_idx]
                 + state.zeta[j, :, t_idx] @ state.zeta[jp, :, t_idx]
                 + state.xi[j, layer, :, t_idx] @ state.xi[jp, layer, :, t_idx])


def attribute_mean(state, j, k, t_idx):
    xi = state.attr_factors
    if not (0 <= j < xi.shape[0] and 0 <= k < state.eta.shape[0] and 0 <= t_idx < state.mu.shape[0]):
        raise IndexOutOfRange(f"invalid attribute cell ({j}, {k}, {t_idx})")
    return float(state.eta[k, t_idx] + np.sum(xi[j, :, :, t_idx] * state.alpha[k, :, :, t_idx]))


def linear_predictor_tensor(mu, zeta, xi):
    """All edge linear predictors as an ``(L, T, J, J)`` array."""
    shared = np.einsum("irt,jrt->tij", zeta, zeta)
    layer = np.einsum("ilrt,jlrt->ltij", xi, xi)
    return mu[None, :, None, None] + shared[None] + layer


def attribute_mean_tensor(eta, xi, alpha):
    """All attribute means as a ``(J, m, T)`` array."""
    return eta[None] + np.einsum("jlrt,klrt->jkt", xi, alpha)


@lru_cache(maxsize=4096)
def _prior_factor(times, sigma_bias_sq, sigma_weight_sq, depth, rel_jitter):
    params = KernelParams(sigma_bias_sq, sigma_weight_sq, depth)
    k = kernel_matrix(times, times, params)
    jit = relative_jitter(k, rel_jitter)
    cov = build_cov(times, params, jit)
    chol = cov.chol
    inv_chol = solve_triangular(chol, np.eye(len(times)), lower=True)
    precision = inv_chol.T @ inv_chol
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    for a in (chol, inv_chol, precision):
        a.flags.writeable = False
    return chol, inv_chol, precision, logdet, cov.jitter


def prior_factor(grid, params, rel_jitter):
    """Cached ``(chol, inv_chol, precision, logdet, abs_jitter)`` of a prior covariance.

    The jitter is ``rel_jitter`` times the kernel's mean diagonal. Sampler
    and log density both go through here so they agree exactly.
    """
    return _prior_factor(tuple(np.asarray(grid, dtype=float)), params.sigma_bias_sq,
                         params.sigma_weight_sq, params.depth, rel_jitter)


def family_vectors(state, family):
    """All T-vectors of one latent family, stacked as rows."""
    if family == "mu":
        return state.mu[None, :]
    T = state.mu.shape[0]
    arr = {"eta": state.eta, "zeta": state.zeta, "xi": state.xi, "alpha": state.alpha,
           "xi_attr": state.xi_attr}[family]
    return arr.reshape(-1, T)


def state_families(state):
    return FAMILIES + (("xi_attr",) if state.xi_attr is not None else ())


def gaussian_prior_logpdf(vectors, grid, params, rel_jitter):
    _, inv_chol, _, logdet, _ = prior_factor(grid, params, rel_jitter)
    w = vectors @ inv_chol.T
    n, T = vectors.shape
    return -0.5 * (np.sum(w * w) + n * logdet + n * T * math.log(2 * math.pi))


def edge_loglik_terms(state, graph):
    """PG-augmented edge log-likelihood per observed cell, ``(a-.5) psi - omega psi^2 / 2``.

    Returned as an ``(L, T, J, J)`` array (zero off the mask, upper triangle only).
    """
    psi = linear_predictor_tensor(state.mu, state.zeta, state.xi)
    up = np.triu(np.ones(psi.shape[2:], bool), 1)
    keep = graph.mask & up
    return np.where(keep, graph.signed_response() * psi - 0.5 * state.omega * psi**2, 0.0)


def attribute_loglik_terms(state, attrs):
    mean = attribute_mean_tensor(state.eta, state.attr_factors, state.alpha)
    s2 = state.sigma2[None, :, None]
    ll = -0.5 * (np.log(2 * math.pi * s2) + (attrs.filled() - mean) ** 2 / s2)
    return np.where(attrs.mask, ll, 0.0)


def log_posterior_unnorm(state, graph, attrs, config):
    """Log of the PG-augmented joint density, up to an additive constant.

    The PG(1, 0) prior density of omega is omitted (constant given omega).
    """
    total = float(edge_loglik_terms(state, graph).sum())
    total += float(attribute_loglik_terms(state, attrs).sum())
    for fam in state_families(state):
        total += gaussian_prior_logpdf(family_vectors(state, fam), graph.grid,
                                       state.beta[fam], config.jitter)
    a, b = config.a_sigma, config.b_sigma
    s2 = state.sigma2
    total += float(np.sum(a * math.log(b) - gammaln(a) - (a + 1) * np.log(s2) - b / s2))
    return total


@dataclass
class PosteriorArchive:
    """Post-burn-in draws stored as stacked arrays (leading axis = draw)."""

    grid: np.ndarray
    config: ModelConfig
    mu: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    alpha: np.ndarray
    sigma2: np.ndarray
    beta: np.ndarray  # (Q, n_families, 2) as (sigma_bias_sq, sigma_weight_sq)
    families: tuple = FAMILIES
    xi_attr: np.ndarray | None = None
    chain: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)
    node_ids: tuple | None = None

    ARRAYS = ("mu", "eta", "zeta", "xi", "alpha", "sigma2", "beta", "xi_attr", "chain")

    def __len__(self):
        return self.mu.shape[0]

    def kernel(self, q, family):
        c, g = self.beta[q, self.families.index(family)]
        return KernelParams(float(c), float(g), self.config.depth)

    def draw(self, q):
        beta = {fam: self.kernel(q, fam) for fam in self.families}
        return LatentState(
            mu=self.mu[q], eta=self.eta[q], zeta=self.zeta[q], xi=self.xi[q],
            alpha=self.alpha[q], sigma2=self.sigma2[q], omega=None, beta=beta,
            xi_attr=None if self.xi_attr is None else self.xi_attr[q],
        )

    @property
    def attr_factors(self):
        return self.xi if self.xi_attr is None else self.xi_attr

    def subset(self, index):
        kw = {}
        for name in self.ARRAYS:
            arr = getattr(self, name)
            kw[name] = None if arr is None else arr[index]
        return replace(self, **kw)
