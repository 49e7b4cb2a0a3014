"""Effective sample size for single-chain MCMC traces."""
import numpy as np


def autocorrelation(x):
    """Normalized autocorrelation at every lag, computed by FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    centered = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return np.zeros(n)
    return acov / acov[0]


def effective_sample_size(x):
    """ESS with Geyer's initial monotone sequence truncation.

    Autocorrelations are summed in adjacent pairs; summation stops at the
    first non-positive pair and pair sums are forced non-increasing.
    A constant trace returns its length.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 4 or np.ptp(x) == 0:
        return float(n)
    rho = autocorrelation(x)
    n_pairs = (n - 1) // 2
    pairs = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    positive = pairs > 0
    cut = n_pairs if positive.all() else int(np.argmin(positive))
    pairs = np.minimum.accumulate(pairs[:cut])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(max(n, 10)))
    return float(n / tau)
