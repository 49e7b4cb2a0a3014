"""Posterior predictive scoring of edges and attributes, and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import DegenerateLabels, GridMismatch
from .kernel import MVN_LADDER, KernelParams, cholesky_with_jitter, conditioning_operator, time_grid
from .model import prior_factor


@dataclass
class EdgeScore:
    dyad: tuple
    probability: float
    decision_threshold: float = 0.5

    @property
    def predicted(self):
        return self.probability > self.decision_threshold


@dataclass
class EdgeScores:
    """Column-oriented edge scores; ``t_idx`` refers to ``times``."""

    layer: np.ndarray
    t_idx: np.ndarray
    i: np.ndarray
    j: np.ndarray
    probability: np.ndarray
    times: np.ndarray
    decision_threshold: float = 0.5

    def __len__(self):
        return self.probability.size

    def __iter__(self):
        for row in zip(self.layer, self.t_idx, self.i, self.j, self.probability):
            l, t, i, j, p = row
            yield EdgeScore((int(i), int(j), int(l), int(t)), float(p), self.decision_threshold)

    def decisions(self):
        return self.probability > self.decision_threshold


@dataclass
class AttrPrediction:
    cell: tuple
    point: float
    interval_lo: float
    interval_hi: float


@dataclass
class AttrPredictions:
    node: np.ndarray
    attr: np.ndarray
    t_idx: np.ndarray
    point: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    times: np.ndarray

    def __len__(self):
        return self.point.size

    def __iter__(self):
        for j, k, t, p, lo, hi in zip(self.node, self.attr, self.t_idx, self.point, self.lo, self.hi):
            yield AttrPrediction((int(j), int(k), int(t)), float(p), float(lo), float(hi))


def _check_grid(archive, grid):
    if archive.grid.shape != np.shape(grid) or not np.allclose(archive.grid, grid):
        raise GridMismatch("archive grid does not match data grid")


def edge_draws(mu, zeta, xi, layer, t_idx, i, j):
    """Linear predictor for each draw (rows) and cell (columns)."""
    psi = mu[:, t_idx]
    # advanced indices split by a slice land in front: (cells, draws, rank)
    psi = psi + np.einsum("cqr,cqr->qc", zeta[:, i, :, t_idx], zeta[:, j, :, t_idx])
    psi = psi + np.einsum("cqr,cqr->qc", xi[:, i, layer, :, t_idx], xi[:, j, layer, :, t_idx])
    return psi


def score_cells(mu, zeta, xi, layer, t_idx, i, j, bernoulli=False, rng=None, chunk=4096):
    layer, t_idx, i, j = (np.asarray(a, dtype=np.int64) for a in (layer, t_idx, i, j))
    out = np.empty(layer.size)
    for s in range(0, layer.size, chunk):
        sl = slice(s, s + chunk)
        p = expit(edge_draws(mu, zeta, xi, layer[sl], t_idx[sl], i[sl], j[sl]))
        if bernoulli:
            out[sl] = (rng.random(p.shape) < p).mean(axis=0)
        else:
            out[sl] = p.mean(axis=0)
    return out


def score_edges(archive, layer, t_idx, i, j, bernoulli=False, rng=None, threshold=0.5):
    """Score arbitrary in-window cells. Rao-Blackwellized unless ``bernoulli``."""
    if bernoulli and rng is None:
        raise ValueError("bernoulli scoring needs an rng")
    prob = score_cells(archive.mu, archive.zeta, archive.xi, layer, t_idx, i, j, bernoulli, rng)
    return EdgeScores(np.asarray(layer), np.asarray(t_idx), np.asarray(i), np.asarray(j),
                      prob, np.array(archive.grid), threshold)


def score_missing_edges(archive, graph, bernoulli=False, rng=None, threshold=0.5):
    """Posterior edge probability for every unobserved upper-triangle cell of ``graph``."""
    _check_grid(archive, graph.grid)
    l, t, i, j = graph.hidden_cells()
    return score_edges(archive, l, t, i, j, bernoulli, rng, threshold)


def score_observed_edges(archive, graph, bernoulli=False, rng=None, threshold=0.5):
    _check_grid(archive, graph.grid)
    l, t, i, j = graph.observed_cells()
    return score_edges(archive, l, t, i, j, bernoulli, rng, threshold)


@dataclass
class ExtendedLatents:
    times: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray
    alpha: np.ndarray
    attr_factors: np.ndarray


def _extend_family(values, betas, depth, grid, new_times, rel_jitter, rng):
    """Joint conditional GP draw at ``new_times`` for every vector of every draw.

    ``values`` has shape (Q, ..., T); draws sharing a kernel are batched.
    """
    Q = values.shape[0]
    inner = values.shape[1:-1]
    out = np.empty((Q,) + inner + (new_times.size,))
    keys = [tuple(b) for b in betas]
    for key in sorted(set(keys)):
        idx = np.array([q for q, k in enumerate(keys) if k == key])
        params = KernelParams(float(key[0]), float(key[1]), depth)
        abs_jitter = prior_factor(grid, params, rel_jitter)[4]
        gain, cond = conditioning_operator(grid, new_times, params, abs_jitter)
        chol = cholesky_with_jitter(cond, MVN_LADDER)[0]
        v = values[idx]
        z = rng.standard_normal(v.shape[:-1] + (new_times.size,))
        out[idx] = v @ gain.T + z @ chol.T
    return out


def extend_latents(archive, new_times, rng):
    """Per posterior draw, one joint conditional draw of every latent path at ``new_times``."""
    new_times = time_grid(new_times)
    cfg = archive.config
    fam = archive.families

    def ext(name, values):
        return _extend_family(values, archive.beta[:, fam.index(name)], cfg.depth,
                              archive.grid, new_times, cfg.jitter, rng)

    mu = ext("mu", archive.mu[:, None, :])[:, 0]
    eta = ext("eta", archive.eta)
    zeta = ext("zeta", archive.zeta)
    xi = ext("xi", archive.xi)
    alpha = ext("alpha", archive.alpha)
    attr_factors = xi if archive.xi_attr is None else ext("xi_attr", archive.xi_attr)
    return ExtendedLatents(np.array(new_times), mu, eta, zeta, xi, alpha, attr_factors)


def score_future_edges(archive, graph, new_times, rng, bernoulli=False, threshold=0.5,
                       cells=None, extended=None):
    """Score every dyad/layer at ``new_times`` (or only ``cells`` = (layer, t_idx, i, j))."""
    _check_grid(archive, graph.grid)
    ext = extended if extended is not None else extend_latents(archive, new_times, rng)
    if cells is None:
        J, L = graph.num_nodes, graph.num_layers
        iu, ju = np.triu_indices(J, 1)
        n_t = ext.times.size
        l, t, d = np.meshgrid(np.arange(L), np.arange(n_t), np.arange(iu.size), indexing="ij")
        cells = (l.ravel(), t.ravel(), iu[d.ravel()], ju[d.ravel()])
    l, t, i, j = cells
    prob = score_cells(ext.mu, ext.zeta, ext.xi, l, t, i, j, bernoulli, rng)
    return EdgeScores(np.asarray(l), np.asarray(t), np.asarray(i), np.asarray(j), prob,
                      ext.times, threshold)


def _attr_samples(eta, factors, alpha, sigma2, node, attr, t_idx, rng):
    mean = eta[:, attr, t_idx] + np.einsum(
        "cqlr,cqlr->qc", factors[:, node, :, :, t_idx], alpha[:, attr, :, :, t_idx])
    sd = np.sqrt(sigma2[:, attr])
    return mean + sd * rng.standard_normal(mean.shape)


def predict_attributes(archive, attrs, targets, rng, new_times=None, extended=None, level=0.95):
    """Posterior predictive point and equal-tailed interval for each target cell.

    ``targets`` is ``(node, attr, t_idx)``; ``t_idx`` indexes the archive
    grid, or ``new_times`` when given.
    """
    _check_grid(archive, attrs.grid)
    node, attr, t_idx = (np.asarray(a, dtype=np.int64) for a in targets)
    if new_times is None and extended is None:
        eta, factors, alpha = archive.eta, archive.attr_factors, archive.alpha
        times = np.array(archive.grid)
    else:
        ext = extended if extended is not None else extend_latents(archive, new_times, rng)
        eta, factors, alpha = ext.eta, ext.attr_factors, ext.alpha
        times = ext.times
    n = node.size
    point = np.empty(n)
    lo = np.empty(n)
    hi = np.empty(n)
    tail = (1 - level) / 2
    for s in range(0, n, 1024):
        sl = slice(s, s + 1024)
        draws = _attr_samples(eta, factors, alpha, archive.sigma2, node[sl], attr[sl], t_idx[sl], rng)
        point[sl] = draws.mean(axis=0)
        q = np.quantile(draws, [tail, 1 - tail], axis=0)
        lo[sl] = np.minimum(q[0], point[sl])
        hi[sl] = np.maximum(q[1], point[sl])
    return AttrPredictions(node, attr, t_idx, point, lo, hi, times)


def auc(scores, truth):
    """Rank-based (Mann-Whitney) area under the ROC curve with midranks for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth).astype(bool)
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    return float((ranks[truth].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def mspe(points, truth):
    points = np.asarray(points, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if points.size == 0:
        raise ValueError("mspe of an empty prediction set")
    return float(np.mean((points - truth) ** 2))


def interval_metrics(lo, hi, truth):
    """Coverage fraction and mean length of the predictive intervals."""
    lo, hi, truth = (np.asarray(a, dtype=np.float64) for a in (lo, hi, truth))
    if truth.size == 0:
        raise ValueError("interval metrics of an empty prediction set")
    covered = (truth >= lo) & (truth <= hi)
    return float(covered.mean()), float(np.mean(hi - lo))
