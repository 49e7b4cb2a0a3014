"""Exact PG(1, c) sampling.

The sampler draws J*(1, |c|/2) with Devroye's alternating-series rejection
method (exponential tail proposal beyond ``TRUNC``, truncated inverse
Gaussian below it) and returns ``J* / 4``. Everything is vectorized over
the tilting parameters; the loops only run over the still-pending draws.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import log_ndtr

from .errors import SamplerStall

TRUNC = 0.64
MAX_PROPOSALS = 10**6
_PI2 = math.pi**2


def pg1_mean(c):
    """E[PG(1, c)] = tanh(c/2) / (2c), with the limit 1/4 near zero."""
    c = np.abs(np.asarray(c, dtype=np.float64))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    out = np.where(small, 0.25 - c**2 / 96.0, np.tanh(safe / 2) / (2 * safe))
    return float(out) if out.ndim == 0 else out


def _series_coef(n, x):
    """n-th coefficient of the alternating series for the J*(1, 0) density."""
    k = n + 0.5
    out = np.empty_like(x)
    lo = x <= TRUNC
    xl = x[lo]
    out[lo] = math.pi * k * (2.0 / (math.pi * xl)) ** 1.5 * np.exp(-2.0 * k * k / xl)
    xh = x[~lo]
    out[~lo] = math.pi * k * np.exp(-0.5 * k * k * _PI2 * xh)
    return out


def _tail_mass(z):
    """Probability of proposing from the exponential tail (x > TRUNC)."""
    t = TRUNC
    fz = 0.125 * _PI2 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = np.log(fz) + fz * t
    xb = x0 - z + log_ndtr(b)
    xa = x0 + z + log_ndtr(a)
    q_over_p = 4.0 / math.pi * (np.exp(xb) + np.exp(xa))
    return 1.0 / (1.0 + q_over_p)


def _truncated_inv_gauss(z, rng):
    """Inverse Gaussian(mean 1/z, shape 1) draws truncated to (0, TRUNC)."""
    t = TRUNC
    out = np.empty_like(z)
    big_mean = z < 1.0 / t  # mean 1/z exceeds the truncation point

    idx = np.flatnonzero(big_mean)
    budget = MAX_PROPOSALS
    while idx.size:
        budget -= 1
        if budget < 0:
            raise SamplerStall("truncated inverse-Gaussian proposal stalled")
        e1 = rng.standard_exponential(idx.size)
        e2 = rng.standard_exponential(idx.size)
        redo = e1 * e1 > 2 * e2 / t
        while np.any(redo):
            k = int(redo.sum())
            e1[redo] = rng.standard_exponential(k)
            e2[redo] = rng.standard_exponential(k)
            redo = e1 * e1 > 2 * e2 / t
        x = t / (1 + t * e1) ** 2
        alpha = np.exp(-0.5 * z[idx] ** 2 * x)
        ok = rng.random(idx.size) <= alpha
        out[idx[ok]] = x[ok]
        idx = idx[~ok]

    idx = np.flatnonzero(~big_mean)
    budget = MAX_PROPOSALS
    while idx.size:
        budget -= 1
        if budget < 0:
            raise SamplerStall("inverse-Gaussian proposal stalled")
        mu = 1.0 / z[idx]
        y = rng.standard_normal(idx.size) ** 2
        x = mu + 0.5 * mu * mu * y - 0.5 * mu * np.sqrt(4 * mu * y + (mu * y) ** 2)
        flip = rng.random(idx.size) > mu / (mu + x)
        x[flip] = mu[flip] ** 2 / x[flip]
        ok = x < t
        out[idx[ok]] = x[ok]
        idx = idx[~ok]
    return out


def sample_pg1_array(c, rng):
    """Independent exact PG(1, c_i) draws for every entry of ``c``."""
    c = np.asarray(c, dtype=np.float64)
    shape = c.shape
    z = 0.5 * np.abs(c.reshape(-1))
    out = np.empty_like(z)
    fz = 0.125 * _PI2 + 0.5 * z * z
    p_tail = _tail_mass(z)

    pending = np.arange(z.size)
    proposals = 0
    while pending.size:
        proposals += 1
        if proposals > MAX_PROPOSALS:
            raise SamplerStall(f"{pending.size} PG draws pending after {MAX_PROPOSALS} proposals")
        zp = z[pending]
        x = np.empty(pending.size)
        tail = rng.random(pending.size) < p_tail[pending]
        x[tail] = TRUNC + rng.standard_exponential(int(tail.sum())) / fz[pending][tail]
        x[~tail] = _truncated_inv_gauss(zp[~tail], rng)

        s = _series_coef(0, x)
        y = rng.random(pending.size) * s
        accepted = np.zeros(pending.size, dtype=bool)
        undecided = np.ones(pending.size, dtype=bool)
        n = 0
        while np.any(undecided):
            n += 1
            u = np.flatnonzero(undecided)
            coef = _series_coef(n, x[u])
            if n % 2 == 1:
                s[u] -= coef
                hit = y[u] <= s[u]
                accepted[u[hit]] = True
                undecided[u[hit]] = False
            else:
                s[u] += coef
                miss = y[u] > s[u]
                undecided[u[miss]] = False
        out[pending[accepted]] = 0.25 * x[accepted]
        pending = pending[~accepted]
    return out.reshape(shape)


def sample_pg1(c, rng):
    """One exact draw from PG(1, c)."""
    return float(sample_pg1_array(np.array([c], dtype=np.float64), rng)[0])


def sample_pg1_truncated(c, rng, n_terms=200):
    """Approximate PG(1, c) by the first ``n_terms`` of its gamma-mixture series.

    Only used as an independent oracle in tests.
    """
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    k = np.arange(1, n_terms + 1)
    g = rng.standard_exponential((c.size, n_terms))
    denom = (k - 0.5) ** 2 + (c[:, None] ** 2) / (4 * _PI2)
    return np.sum(g / denom, axis=1) / (2 * _PI2)
