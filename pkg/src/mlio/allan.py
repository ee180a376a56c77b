"""Allan-variance characterization of inertial sensor noise.

Computes the overlapping Allan deviation on logarithmically spaced cluster
times and fits the two parameters used to seed the estimator noise model:
the white-noise (angle/velocity random walk) density N from the slope -1/2
region, and the bias instability B from the curve minimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class AllanResult:
    tau: np.ndarray  # cluster times, s
    adev: np.ndarray  # Allan deviation per cluster time
    white_noise_density: float  # N, units/sqrt(Hz)
    bias_instability: float  # B, units


def overlapping_allan_deviation(samples, rate_hz, num_taus=60):
    """Overlapping Allan deviation of a uniformly sampled scalar series."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 100:
        raise InsufficientDataError(f"need at least 100 samples, got {n}")
    tau0 = 1.0 / rate_hz
    max_m = n // 3
    ms = np.unique(
        np.round(np.logspace(0, np.log10(max_m), num_taus)).astype(int)
    )
    ms = ms[ms >= 1]
    # cumulative sum gives cluster averages in O(1) per cluster
    cs = np.concatenate([[0.0], np.cumsum(x)])
    taus = ms * tau0
    adev = np.empty(ms.size)
    for i, m in enumerate(ms):
        means = (cs[m:] - cs[:-m]) / m
        if means.size <= m:
            adev[i] = np.nan
            continue
        d = means[m:] - means[:-m]
        adev[i] = np.sqrt(0.5 * np.mean(d**2))
    keep = np.isfinite(adev)
    return taus[keep], adev[keep]


def fit_noise_parameters(tau, adev):
    """Fit N (slope -1/2 line evaluated at tau = 1 s) and B (curve minimum)."""
    tau = np.asarray(tau, dtype=float)
    adev = np.asarray(adev, dtype=float)
    positive = adev > 0.0
    tau, adev = tau[positive], adev[positive]
    if tau.size == 0:
        return 0.0, 0.0
    # white-noise region: short cluster times, local log-log slope near -1/2
    log_tau, log_dev = np.log10(tau), np.log10(adev)
    slopes = np.gradient(log_dev, log_tau)
    # long cluster times are both noisy and contaminated by slow processes;
    # keep the fit in the short-tau part of the -1/2 region
    region = (np.abs(slopes + 0.5) < 0.25) & (tau <= 3.0)
    if not np.any(region):
        region = tau <= tau[max(0, tau.size // 4)]
    # project each region point along slope -1/2 onto tau = 1 s and average
    n_fit = float(10.0 ** np.mean(log_dev[region] + 0.5 * log_tau[region]))
    bias_instability = float(adev.min() / 0.664)
    return n_fit, bias_instability


def allan_variance(samples, rate_hz) -> AllanResult:
    tau, adev = overlapping_allan_deviation(samples, rate_hz)
    n_fit, bias = fit_noise_parameters(tau, adev)
    return AllanResult(
        tau=tau, adev=adev, white_noise_density=n_fit, bias_instability=bias
    )
