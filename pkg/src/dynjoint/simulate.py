"""Synthetic datasets: NN-GP latents, AR(1) latents, and a dyad-independent TERGM.

Also implements the masking protocol that hides random dyads at randomly
selected times plus whole future time points, keeping a ledger of every
hidden value so evaluation can score predictions against the truth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .kernel import KernelParams, build_cov
from .model import (
    UNKNOWN,
    AttributeSeries,
    MultiplexGraphSeries,
    attribute_mean_tensor,
    linear_predictor_tensor,
)


@dataclass(frozen=True)
class Sizes:
    num_nodes: int = 20
    num_layers: int = 2
    num_attrs: int = 2
    num_times: int = 20
    layer_rank: int = 4
    shared_rank: int = 4


@dataclass(frozen=True)
class Scheme1Params:
    sizes: Sizes = Sizes()
    beta: dict = field(default_factory=lambda: {
        fam: (0.01, 0.4) for fam in ("mu", "eta", "zeta", "xi", "alpha")})
    depth: int = 1
    noise_var: float = 1.0

    def kernel(self, family):
        c, g = self.beta[family]
        return KernelParams(c, g, self.depth)


@dataclass(frozen=True)
class Scheme2Params:
    sizes: Sizes = Sizes()
    rho: dict = field(default_factory=lambda: {
        fam: 0.5 for fam in ("mu", "eta", "zeta", "xi", "alpha")})
    innovation_var: dict = field(default_factory=lambda: {
        fam: 4.0 for fam in ("mu", "eta", "zeta", "xi", "alpha")})
    noise_var: float = 1.0

    def __post_init__(self):
        if any(abs(v) >= 1 for v in self.rho.values()):
            raise ValueError("AR(1) coefficients must satisfy |rho| < 1")
        if any(v <= 0 for v in self.innovation_var.values()):
            raise ValueError("innovation variances must be positive")


@dataclass(frozen=True)
class Scheme3Params:
    attributes: Scheme1Params = Scheme1Params()
    theta1_scale: float = 1.0
    theta2: float = 0.5


@dataclass(frozen=True)
class MaskPolicy:
    time_select_prob: float = 0.1
    edge_drop_prob: float = 0.25
    attr_drop_prob: float = 0.25
    holdout_future_times: int = 0

    def __post_init__(self):
        for name in ("time_select_prob", "edge_drop_prob", "attr_drop_prob"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.holdout_future_times < 0:
            raise ValueError("holdout_future_times must be >= 0")


@dataclass
class Truth:
    """Ground truth of a simulated dataset (latents may be absent for scheme 3)."""

    grid: np.ndarray
    adjacency: np.ndarray  # (L, T, J, J) 0/1, symmetric
    attributes: np.ndarray  # (J, m, T)
    latents: dict = field(default_factory=dict)


@dataclass
class SimulatedData:
    graph: MultiplexGraphSeries
    attrs: AttributeSeries
    truth: Truth


@dataclass
class HiddenLedger:
    """Every cell removed by :func:`apply_mask`, with its true value.

    Edge rows are ``(layer, t_idx, i, j, value)`` with ``i < j``;
    attribute rows are ``(node, attr, t_idx, value)``. ``t_idx`` indexes
    the full (pre-holdout) grid.
    """

    grid: np.ndarray
    train_times: int
    missing_edges: np.ndarray
    future_edges: np.ndarray
    missing_attrs: np.ndarray
    future_attrs: np.ndarray

    @property
    def future_grid(self):
        return self.grid[self.train_times:]


@dataclass
class MaskResult:
    graph: MultiplexGraphSeries
    attrs: AttributeSeries | None
    ledger: HiddenLedger


def integer_grid(num_times):
    return np.arange(1, num_times + 1, dtype=np.float64)


def _gp_draw(rng, chol, *shape):
    return rng.standard_normal(shape + (chol.shape[0],)) @ chol.T


def _finish(latents, grid, rng, noise_var):
    mu, zeta, xi = latents["mu"], latents["zeta"], latents["xi"]
    psi = linear_predictor_tensor(mu, zeta, xi)
    adjacency = _bernoulli_symmetric(expit(psi), rng)
    mean = attribute_mean_tensor(latents["eta"], xi, latents["alpha"])
    x = mean + np.sqrt(noise_var) * rng.standard_normal(mean.shape)
    return _package(grid, adjacency, x, latents)


def _bernoulli_symmetric(prob, rng):
    J = prob.shape[-1]
    draws = (rng.random(prob.shape) < prob).astype(np.int8)
    up = np.triu(np.ones((J, J), bool), 1)
    a = np.where(up, draws, 0)
    return (a + np.swapaxes(a, -1, -2)).astype(np.int8)


def _package(grid, adjacency, x, latents):
    graph = MultiplexGraphSeries.from_dense(grid, adjacency)
    attrs = AttributeSeries(grid, x, np.ones(x.shape, bool))
    return SimulatedData(graph, attrs, Truth(np.array(grid), adjacency, x, latents))


def simulate_scheme1(p, grid, rng):
    """Latents from zero-mean NN-GPs, Bernoulli-logit edges, Gaussian attributes."""
    sz = p.sizes
    chols = {fam: build_cov(grid, p.kernel(fam), 0.0).chol for fam in p.beta}
    latents = {
        "mu": _gp_draw(rng, chols["mu"], 1)[0],
        "eta": _gp_draw(rng, chols["eta"], sz.num_attrs),
        "zeta": _gp_draw(rng, chols["zeta"], sz.num_nodes, sz.shared_rank),
        "xi": _gp_draw(rng, chols["xi"], sz.num_nodes, sz.num_layers, sz.layer_rank),
        "alpha": _gp_draw(rng, chols["alpha"], sz.num_attrs, sz.num_layers, sz.layer_rank),
    }
    return _finish(latents, grid, rng, p.noise_var)


def ar1_paths(rng, rho, innovation_var, shape, num_times):
    """Stationary AR(1) paths; the pre-sample value is drawn from the stationary law."""
    sd = np.sqrt(innovation_var)
    prev = rng.standard_normal(shape) * sd / np.sqrt(1 - rho**2)
    out = np.empty(shape + (num_times,))
    for t in range(num_times):
        prev = rho * prev + sd * rng.standard_normal(shape)
        out[..., t] = prev
    return out


def simulate_scheme2(p, grid, rng):
    """Latents from stationary AR(1) processes; edges/attributes as in scheme 1."""
    sz = p.sizes
    T = len(grid)
    shapes = {
        "mu": (1,),
        "eta": (sz.num_attrs,),
        "zeta": (sz.num_nodes, sz.shared_rank),
        "xi": (sz.num_nodes, sz.num_layers, sz.layer_rank),
        "alpha": (sz.num_attrs, sz.num_layers, sz.layer_rank),
    }
    latents = {fam: ar1_paths(rng, p.rho[fam], p.innovation_var[fam], shape, T)
               for fam, shape in shapes.items()}
    latents["mu"] = latents["mu"][0]
    return _finish(latents, grid, rng, p.noise_var)


def scheme3_dyad_logits(x, theta1, theta2):
    """Per-dyad log-odds ``2 theta1 <x_j, x_j'> + 2 theta2`` for attributes ``x`` of shape (J, m).

    The ordered double sums in both sufficient statistics count each dyad
    twice, which is where the factors of two come from.
    """
    return 2.0 * theta1 * (x @ x.T) + 2.0 * theta2


def simulate_scheme3(p, grid, rng):
    """Attributes from scheme 1; each layer/time drawn from the dyad-independent TERGM."""
    base = simulate_scheme1(p.attributes, grid, rng)
    x = base.truth.attributes
    L = p.attributes.sizes.num_layers
    T = len(grid)
    J = x.shape[0]
    logits = np.empty((L, T, J, J))
    for t in range(T):
        theta1 = p.theta1_scale * grid[t] / grid[-1]
        logits[:, t] = scheme3_dyad_logits(x[:, :, t], theta1, p.theta2)[None]
    adjacency = _bernoulli_symmetric(expit(logits), rng)
    return _package(grid, adjacency, x, {})


def standardize_attributes(data):
    """Center and scale each attribute over all nodes and times of the generated data."""
    x = data.truth.attributes
    mean = x.mean(axis=(0, 2), keepdims=True)
    sd = x.std(axis=(0, 2), keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    z = (x - mean) / sd
    attrs = AttributeSeries(data.attrs.grid, z, np.ones(z.shape, bool))
    truth = Truth(data.truth.grid, data.truth.adjacency, z, dict(data.truth.latents))
    truth.latents["attr_center"] = mean.reshape(-1)
    truth.latents["attr_scale"] = sd.reshape(-1)
    return SimulatedData(data.graph, attrs, truth)


def apply_mask(graph, policy, rng, attrs=None):
    """Hide cells per ``policy``; returns the masked data and the ledger of hidden truth.

    Per layer, each training time is selected with ``time_select_prob``
    and each dyad at a selected time is hidden with ``edge_drop_prob``.
    Attributes follow the same protocol per attribute (``attr_drop_prob``
    per node). The last ``holdout_future_times`` times are removed
    wholesale.
    """
    J, L, T = graph.num_nodes, graph.num_layers, graph.num_times
    h = policy.holdout_future_times
    if h >= T:
        raise ValueError("cannot hold out every time point")
    Tt = T - h
    up = np.triu(np.ones((J, J), bool), 1)

    selected = rng.random((L, Tt)) < policy.time_select_prob
    drop = (rng.random((L, Tt, J, J)) < policy.edge_drop_prob) & up & selected[:, :, None, None]
    drop &= graph.mask[:, :Tt]
    drop = drop | drop.transpose(0, 1, 3, 2)

    def edge_rows(sel, t_offset):
        l, t, i, j = np.nonzero(sel & up)
        vals = graph.edges[l, t + t_offset, i, j]
        return np.column_stack([l, t + t_offset, i, j, vals]).astype(np.int64)

    missing_edges = edge_rows(drop, 0)
    future_edges = edge_rows(graph.mask[:, Tt:], Tt)
    new_mask = graph.mask[:, :Tt] & ~drop
    new_edges = np.where(new_mask, graph.edges[:, :Tt], UNKNOWN)
    masked_graph = MultiplexGraphSeries(graph.grid[:Tt], new_edges, new_mask)

    masked_attrs = None
    missing_attrs = np.empty((0, 4))
    future_attrs = np.empty((0, 4))
    if attrs is not None:
        m = attrs.num_attrs
        a_sel = rng.random((m, Tt)) < policy.time_select_prob
        a_drop = (rng.random((J, m, Tt)) < policy.attr_drop_prob) & a_sel[None]
        a_drop &= attrs.mask[:, :, :Tt]

        def attr_rows(sel, t_offset):
            j, k, t = np.nonzero(sel)
            vals = attrs.values[j, k, t + t_offset]
            return np.column_stack([j, k, t + t_offset, vals]).astype(np.float64)

        missing_attrs = attr_rows(a_drop, 0)
        future_attrs = attr_rows(attrs.mask[:, :, Tt:], Tt)
        masked_attrs = AttributeSeries(attrs.grid[:Tt], attrs.values[:, :, :Tt],
                                       attrs.mask[:, :, :Tt] & ~a_drop)

    ledger = HiddenLedger(np.array(graph.grid), Tt, missing_edges, future_edges,
                          missing_attrs, future_attrs)
    return MaskResult(masked_graph, masked_attrs, ledger)


def unmask(masked, ledger):
    """Rebuild the pre-mask graph from a masked graph and its ledger."""
    L, Tt, J, _ = masked.edges.shape
    T = ledger.grid.size
    edges = np.full((L, T, J, J), UNKNOWN, dtype=np.int8)
    mask = np.zeros((L, T, J, J), bool)
    edges[:, :Tt] = masked.edges
    mask[:, :Tt] = masked.mask
    for rows in (ledger.missing_edges, ledger.future_edges):
        if rows.size:
            l, t, i, j, v = rows.T
            edges[l, t, i, j] = v
            edges[l, t, j, i] = v
            mask[l, t, i, j] = True
            mask[l, t, j, i] = True
    return MultiplexGraphSeries(ledger.grid, edges, mask)


def unmask_attributes(masked, ledger):
    J, m, Tt = masked.values.shape
    T = ledger.grid.size
    values = np.full((J, m, T), np.nan)
    mask = np.zeros((J, m, T), bool)
    values[:, :, :Tt] = masked.values
    mask[:, :, :Tt] = masked.mask
    for rows in (ledger.missing_attrs, ledger.future_attrs):
        if rows.size:
            j, k, t = rows[:, :3].astype(np.int64).T
            values[j, k, t] = rows[:, 3]
            mask[j, k, t] = True
    return AttributeSeries(ledger.grid, values, mask)
