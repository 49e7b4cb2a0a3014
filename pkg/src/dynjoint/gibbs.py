"""Blocked Gibbs sampler for the joint multiplex-graph / attribute model.

Every Gaussian block is drawn from ``N(P^-1 b, P^-1)`` where ``P`` is the
data precision plus the prior precision of the block's kernel and ``b``
the data moment. For edge terms the PG augmentation turns each observed
cell into a Gaussian pseudo-observation ``(a - 0.5) / omega`` with weight
``omega``, so ``omega * pseudo = a - 0.5`` is what actually enters ``b``.

The ``*_conditional`` functions return ``(P, b)`` without drawing; the
``update_*`` functions draw and write back into the state.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack
from scipy.stats import ortho_group

from . import diagnostics
from .errors import FactorizationFailure, SamplerStall, SweepError
from .kernel import KernelParams, relative_jitter
from .model import (
    FAMILIES,
    LatentState,
    PosteriorArchive,
    attribute_mean_tensor,
    family_vectors,
    linear_predictor_tensor,
    prior_factor,
    state_families,
)
from .polya_gamma import sample_pg1_array

logger = logging.getLogger(__name__)

REQUIRED_BLOCKS = ("omega", "mu", "eta", "sigma2", "zeta", "xi", "alpha", "beta")
# "rotate" is an optional exact move along the rotational symmetry of the factors
BLOCK_ORDER = ("omega", "mu", "eta", "sigma2", "zeta", "xi", "alpha", "rotate", "beta")


@dataclass(frozen=True)
class SweepPlan:
    order: tuple = BLOCK_ORDER
    thin: int = 1

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        unknown = set(self.order) - set(BLOCK_ORDER)
        if unknown:
            raise ValueError(f"unknown blocks {sorted(unknown)}")
        missing = set(REQUIRED_BLOCKS) - set(self.order)
        if missing:
            raise ValueError(f"sweep must visit every block; missing {sorted(missing)}")


def draw_gaussian(precision, rhs, rng):
    """Draw from ``N(P^-1 b, P^-1)`` via one Cholesky of ``P``."""
    chol, info = lapack.dpotrf(precision, lower=1, clean=1)
    if info != 0:
        n = precision.shape[0]
        for rel in (1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
            chol, info = lapack.dpotrf(precision + relative_jitter(precision, rel) * np.eye(n),
                                       lower=1, clean=1)
            if info == 0:
                break
        else:
            raise FactorizationFailure("block precision not positive definite")
    mean, _ = lapack.dpotrs(chol, rhs, lower=1)
    z = rng.standard_normal(rhs.shape[0])
    noise, _ = lapack.dtrtrs(chol, z, lower=1, trans=1)
    return mean + noise


class Workspace:
    """Data arrays plus running sufficient quantities for one chain.

    ``psi`` is the ``(L, T, J, J)`` edge linear predictor and ``resid`` the
    masked ``(J, m, T)`` attribute residual; both are kept in sync with the
    state by every block update.
    """

    def __init__(self, state, graph, attrs, config):
        self.state = state
        self.graph = graph
        self.attrs = attrs
        self.config = config
        self.grid = graph.grid
        # omega only lives on observed cells
        state.omega[~graph.mask] = 0.0
        self.kappa = graph.signed_response()
        up = np.triu(np.ones((graph.num_nodes,) * 2, bool), 1)
        self.obs_idx = np.nonzero(graph.mask & up)
        self.x = attrs.filled()
        self.xmask = attrs.mask.astype(np.float64)
        self.refresh()

    def refresh(self):
        s = self.state
        self.psi = linear_predictor_tensor(s.mu, s.zeta, s.xi)
        mean = attribute_mean_tensor(s.eta, s.attr_factors, s.alpha)
        self.resid = (self.x - mean) * self.xmask

    def prior_precision(self, family):
        return prior_factor(self.grid, self.state.beta[family], self.config.jitter)[2]


# ---------------------------------------------------------------- omega

def omega_step(ws, rng):
    l, t, j, jp = ws.obs_idx
    draws = sample_pg1_array(ws.psi[l, t, j, jp], rng)
    omega = ws.state.omega
    omega[l, t, j, jp] = draws
    omega[l, t, jp, j] = draws


# ---------------------------------------------------------------- mu

def mu_conditional(ws):
    s = ws.state
    w = s.omega
    # symmetric storage counts each dyad twice
    prec_diag = 0.5 * w.sum(axis=(0, 2, 3))
    rhs = 0.5 * (ws.kappa - w * ws.psi).sum(axis=(0, 2, 3)) + prec_diag * s.mu
    return ws.prior_precision("mu") + np.diag(prec_diag), rhs


def mu_step(ws, rng):
    P, b = mu_conditional(ws)
    new = draw_gaussian(P, b, rng)
    ws.psi += (new - ws.state.mu)[None, :, None, None]
    ws.state.mu[:] = new


# ---------------------------------------------------------------- eta / sigma2

def eta_conditional(ws, k):
    s = ws.state
    mk = ws.xmask[:, k, :]
    prec_diag = mk.sum(axis=0) / s.sigma2[k]
    rhs = (ws.resid[:, k, :] + s.eta[k] * mk).sum(axis=0) / s.sigma2[k]
    return ws.prior_precision("eta") + np.diag(prec_diag), rhs


def eta_step(ws, rng):
    s = ws.state
    for k in range(s.eta.shape[0]):
        P, b = eta_conditional(ws, k)
        new = draw_gaussian(P, b, rng)
        ws.resid[:, k, :] -= (new - s.eta[k])[None, :] * ws.xmask[:, k, :]
        s.eta[k] = new


def sigma2_posterior(ws, k):
    """Shape and rate of the inverse-gamma full conditional of sigma_k^2."""
    n_k = ws.xmask[:, k, :].sum()
    rate = ws.config.b_sigma + 0.5 * np.sum(ws.resid[:, k, :] ** 2)
    return ws.config.a_sigma + 0.5 * n_k, rate


def sigma2_step(ws, rng):
    s = ws.state
    for k in range(s.sigma2.shape[0]):
        shape, rate = sigma2_posterior(ws, k)
        s.sigma2[k] = rate / rng.gamma(shape)


# ---------------------------------------------------------------- zeta

def zeta_conditional(ws, j, r):
    s = ws.state
    w = s.omega[:, :, j, :]
    zr = s.zeta[:, r, :].T[None]  # (1, T, J)
    prec_diag = np.sum(w * zr * zr, axis=(0, 2))
    partial = ws.psi[:, :, j, :] - s.zeta[j, r, :][None, :, None] * zr
    rhs = np.sum(zr * (ws.kappa[:, :, j, :] - w * partial), axis=(0, 2))
    return ws.prior_precision("zeta") + np.diag(prec_diag), rhs


def zeta_step(ws, rng):
    s = ws.state
    J, R, _ = s.zeta.shape
    for j in range(J):
        for r in range(R):
            P, b = zeta_conditional(ws, j, r)
            new = draw_gaussian(P, b, rng)
            d = (new - s.zeta[j, r, :])[:, None] * s.zeta[:, r, :].T
            d[:, j] = 0.0
            ws.psi[:, :, j, :] += d[None]
            ws.psi[:, :, :, j] += d[None]
            s.zeta[j, r, :] = new


# ---------------------------------------------------------------- xi

def _xi_edge_terms(ws, j, l, r):
    s = ws.state
    w = s.omega[l, :, j, :]
    xr = s.xi[:, l, r, :].T  # (T, J)
    prec_diag = np.sum(w * xr * xr, axis=1)
    partial = ws.psi[l, :, j, :] - s.xi[j, l, r, :][:, None] * xr
    rhs = np.sum(xr * (ws.kappa[l, :, j, :] - w * partial), axis=1)
    return prec_diag, rhs


def _xi_attr_terms(ws, j, l, r, factors):
    s = ws.state
    a = s.alpha[:, l, r, :]  # (m, T)
    mj = ws.xmask[j]
    inv_s2 = (1.0 / s.sigma2)[:, None]
    prec_diag = np.sum(a * a * mj * inv_s2, axis=0)
    rhs = np.sum(a * (ws.resid[j] + factors[j, l, r, :][None, :] * a * mj) * inv_s2, axis=0)
    return prec_diag, rhs


def xi_conditional(ws, j, l, r):
    """Conditional of the graph-side layer factor (adds attribute terms in joint mode)."""
    prec_diag, rhs = _xi_edge_terms(ws, j, l, r)
    if ws.state.xi_attr is None:
        pa, ba = _xi_attr_terms(ws, j, l, r, ws.state.xi)
        prec_diag = prec_diag + pa
        rhs = rhs + ba
    return ws.prior_precision("xi") + np.diag(prec_diag), rhs


def xi_attr_conditional(ws, j, l, r):
    """Conditional of the attribute-side factor copy (marginal ablation only)."""
    prec_diag, rhs = _xi_attr_terms(ws, j, l, r, ws.state.xi_attr)
    return ws.prior_precision("xi_attr") + np.diag(prec_diag), rhs


def _apply_xi_delta(ws, j, l, r, delta, attr_side):
    s = ws.state
    if attr_side:
        ws.resid[j] -= delta[None, :] * s.alpha[:, l, r, :] * ws.xmask[j]


def xi_step(ws, rng):
    s = ws.state
    J, L, R, _ = s.xi.shape
    joint = s.xi_attr is None
    for j in range(J):
        for l in range(L):
            for r in range(R):
                P, b = xi_conditional(ws, j, l, r)
                new = draw_gaussian(P, b, rng)
                delta = new - s.xi[j, l, r, :]
                d = delta[:, None] * s.xi[:, l, r, :].T
                d[:, j] = 0.0
                ws.psi[l, :, j, :] += d
                ws.psi[l, :, :, j] += d
                if joint:
                    _apply_xi_delta(ws, j, l, r, delta, True)
                s.xi[j, l, r, :] = new
    if not joint:
        for j in range(J):
            for l in range(L):
                for r in range(R):
                    P, b = xi_attr_conditional(ws, j, l, r)
                    new = draw_gaussian(P, b, rng)
                    _apply_xi_delta(ws, j, l, r, new - s.xi_attr[j, l, r, :], True)
                    s.xi_attr[j, l, r, :] = new


# ---------------------------------------------------------------- alpha

def alpha_conditional(ws, k, l, r):
    s = ws.state
    xa = s.attr_factors[:, l, r, :]  # (J, T)
    mk = ws.xmask[:, k, :]
    prec_diag = np.sum(xa * xa * mk, axis=0) / s.sigma2[k]
    rhs = np.sum(xa * (ws.resid[:, k, :] + s.alpha[k, l, r, :][None, :] * xa * mk), axis=0)
    rhs /= s.sigma2[k]
    return ws.prior_precision("alpha") + np.diag(prec_diag), rhs


def alpha_step(ws, rng):
    s = ws.state
    m, L, R, _ = s.alpha.shape
    for k in range(m):
        for l in range(L):
            for r in range(R):
                P, b = alpha_conditional(ws, k, l, r)
                new = draw_gaussian(P, b, rng)
                ws.resid[:, k, :] -= (s.attr_factors[:, l, r, :] * (new - s.alpha[k, l, r, :])
                                      * ws.xmask[:, k, :])
                s.alpha[k, l, r, :] = new


# ---------------------------------------------------------------- rotation

def haar_orthogonal(dim, rng):
    if dim == 1:
        return np.array([[rng.choice([-1.0, 1.0])]])
    return ortho_group.rvs(dim, random_state=rng)


def rotate_step(ws, rng):
    """Apply Haar-random orthogonal maps along the exact symmetries of the posterior.

    Edge and attribute likelihoods depend on the factors only through inner
    products, and the priors are isotropic across rank, so rotating
    (xi_l, alpha_l) together per layer and zeta on its own leaves the
    posterior unchanged. In ablation mode xi_l and (xi_attr_l, alpha_l)
    rotate independently.
    """
    s = ws.state
    L, R = s.xi.shape[1], s.xi.shape[2]
    for l in range(L):
        O = haar_orthogonal(R, rng)
        s.xi[:, l] = np.einsum("rs,jst->jrt", O, s.xi[:, l])
        if s.xi_attr is not None:
            O = haar_orthogonal(R, rng)
            s.xi_attr[:, l] = np.einsum("rs,jst->jrt", O, s.xi_attr[:, l])
        s.alpha[:, l] = np.einsum("rs,kst->krt", O, s.alpha[:, l])
    O = haar_orthogonal(s.zeta.shape[1], rng)
    s.zeta[:] = np.einsum("rs,jst->jrt", O, s.zeta)
    ws.refresh()


# ---------------------------------------------------------------- beta grids

def _sorted_candidates(config):
    # tie-break: smallest (sigma_weight_sq, sigma_bias_sq) first
    return sorted(config.hyper_grid, key=lambda cg: (cg[1], cg[0]))


def beta_scores(vectors, grid, config):
    """Summed Gaussian log prior of ``vectors`` under every grid candidate.

    Returns ``(candidates, scores)`` with candidates in tie-break order.
    """
    cands = _sorted_candidates(config)
    n, _ = vectors.shape
    scatter = vectors.T @ vectors
    scores = np.empty(len(cands))
    for i, pair in enumerate(cands):
        _, _, prec, logdet, _ = prior_factor(grid, config.kernel(pair), config.jitter)
        scores[i] = -0.5 * (np.sum(prec * scatter) + n * logdet)
    return cands, scores


def select_beta(vectors, grid, config):
    cands, scores = beta_scores(vectors, grid, config)
    return config.kernel(cands[int(np.argmax(scores))])


def beta_step(ws, rng=None):
    s = ws.state
    for fam in state_families(s):
        s.beta[fam] = select_beta(family_vectors(s, fam), ws.grid, ws.config)


# ---------------------------------------------------------------- public block API

STEPS = {
    "omega": omega_step,
    "mu": mu_step,
    "eta": eta_step,
    "sigma2": sigma2_step,
    "zeta": zeta_step,
    "xi": xi_step,
    "alpha": alpha_step,
    "rotate": rotate_step,
    "beta": beta_step,
}


def _run_block(name, state, graph, attrs, config, rng):
    ws = Workspace(state, graph, attrs, config)
    STEPS[name](ws, rng)
    return state


def update_omega(state, graph, attrs, config, rng):
    return _run_block("omega", state, graph, attrs, config, rng)


def update_mu(state, graph, attrs, config, rng):
    return _run_block("mu", state, graph, attrs, config, rng)


def update_eta(state, graph, attrs, config, rng):
    return _run_block("eta", state, graph, attrs, config, rng)


def update_sigma2(state, graph, attrs, config, rng):
    return _run_block("sigma2", state, graph, attrs, config, rng)


def update_zeta(state, graph, attrs, config, rng):
    return _run_block("zeta", state, graph, attrs, config, rng)


def update_xi(state, graph, attrs, config, rng):
    return _run_block("xi", state, graph, attrs, config, rng)


def update_alpha(state, graph, attrs, config, rng):
    return _run_block("alpha", state, graph, attrs, config, rng)


def update_rotation(state, graph, attrs, config, rng):
    return _run_block("rotate", state, graph, attrs, config, rng)


def update_beta_grids(state, config, grid):
    for fam in state_families(state):
        state.beta[fam] = select_beta(family_vectors(state, fam), grid, config)
    return state


# ---------------------------------------------------------------- chain driver

def initial_state(graph, attrs, config, rng):
    """Prior draws at the initial kernel parameters, sigma^2 = 1, omega from one PG pass."""
    T = graph.num_times
    J, L, m = graph.num_nodes, graph.num_layers, attrs.num_attrs
    R, Rz = config.layer_rank, config.shared_rank
    params = config.kernel(config.init_beta)
    chol = prior_factor(graph.grid, params, config.jitter)[0]

    def prior(*shape):
        return rng.standard_normal(shape + (T,)) @ chol.T

    families = FAMILIES if config.joint_mode else FAMILIES + ("xi_attr",)
    state = LatentState(
        mu=prior(1)[0],
        eta=prior(m),
        zeta=prior(J, Rz),
        xi=prior(J, L, R),
        alpha=prior(m, L, R),
        sigma2=np.ones(m),
        omega=np.zeros(graph.edges.shape),
        beta={fam: params for fam in families},
        xi_attr=None if config.joint_mode else prior(J, L, R),
    )
    ws = Workspace(state, graph, attrs, config)
    omega_step(ws, rng)
    return state, ws


def monitored_scalars(state):
    """Scalars tracked for ESS: mu(t1), eta_2(t1), alpha_{1,1,R}(t1), xi_{1,1,ceil(R/2)}(t1)."""
    m = state.eta.shape[0]
    R = state.alpha.shape[2]
    out = {"mu[t1]": state.mu[0]}
    k = 1 if m >= 2 else 0
    out[f"eta[{k + 1}][t1]"] = state.eta[k, 0]
    out[f"alpha[1,1,{R}][t1]"] = state.alpha[0, 0, R - 1, 0]
    out[f"xi[1,1,{math.ceil(R / 2)}][t1]"] = state.xi[0, 0, math.ceil(R / 2) - 1, 0]
    return out


def run_chain(graph, attrs, config, plan=None, seed=None, progress=None):
    """Run one chain and return a :class:`PosteriorArchive` of ``config.keep`` draws.

    Numerical failures are re-raised as :class:`SweepError` carrying the
    sweep index.
    """
    if graph.grid.shape != attrs.grid.shape or not np.array_equal(graph.grid, attrs.grid):
        raise ValueError("graph and attribute grids differ")
    plan = plan or SweepPlan(thin=config.thin)
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    state, ws = initial_state(graph, attrs, config, rng)
    families = tuple(state_families(state))

    Q = config.keep
    T = graph.num_times
    J, L, m = graph.num_nodes, graph.num_layers, attrs.num_attrs
    R, Rz = config.layer_rank, config.shared_rank
    out = {
        "mu": np.empty((Q, T)),
        "eta": np.empty((Q, m, T)),
        "zeta": np.empty((Q, J, Rz, T)),
        "xi": np.empty((Q, J, L, R, T)),
        "alpha": np.empty((Q, m, L, R, T)),
        "sigma2": np.empty((Q, m)),
        "beta": np.empty((Q, len(families), 2)),
    }
    if not config.joint_mode:
        out["xi_attr"] = np.empty((Q, J, L, R, T))
    traces = {}

    total = config.burn_in + Q * plan.thin
    start = time.perf_counter()
    kept = 0
    for sweep in range(total):
        try:
            for block in plan.order:
                STEPS[block](ws, rng)
        except (FactorizationFailure, SamplerStall) as exc:
            raise SweepError(sweep, exc) from exc
        if sweep >= config.burn_in and (sweep - config.burn_in + 1) % plan.thin == 0:
            for name in ("mu", "eta", "zeta", "xi", "alpha", "sigma2"):
                out[name][kept] = getattr(state, name)
            if not config.joint_mode:
                out["xi_attr"][kept] = state.xi_attr
            out["beta"][kept] = [(state.beta[f].sigma_bias_sq, state.beta[f].sigma_weight_sq)
                                 for f in families]
            for key, val in monitored_scalars(state).items():
                traces.setdefault(key, np.empty(Q))[kept] = val
            kept += 1
        if progress is not None:
            progress(sweep + 1, total)
    wall = time.perf_counter() - start

    ess = {k: float(diagnostics.effective_sample_size(v)) for k, v in traces.items()}
    logger.info("chain seed=%s: %d sweeps in %.1fs, ESS %s", seed, total, wall, ess)
    provenance = {
        "seed": int(seed),
        "sweeps": int(total),
        "wall_time": wall,
        "seconds_per_sweep": wall / max(total, 1),
        "ess": ess,
    }
    return PosteriorArchive(
        grid=np.array(graph.grid), config=config, families=families,
        provenance=provenance, xi_attr=out.pop("xi_attr", None), **out,
    )


def merge_archives(archives):
    """Concatenate independent chains into one archive with chain labels."""
    first = archives[0]
    kw = {}
    for name in ("mu", "eta", "zeta", "xi", "alpha", "sigma2", "beta", "xi_attr"):
        arrs = [getattr(a, name) for a in archives]
        kw[name] = None if arrs[0] is None else np.concatenate(arrs)
    chain = np.concatenate([np.full(len(a), i, dtype=np.int64) for i, a in enumerate(archives)])
    prov = {"chains": [a.provenance for a in archives]}
    return PosteriorArchive(grid=first.grid, config=first.config, families=first.families,
                            chain=chain, provenance=prov, node_ids=first.node_ids, **kw)
