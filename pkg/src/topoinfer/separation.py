"""Filtering a time-invariant input out of an observed trajectory.

Once the network is in its steady period, a constant input shows up only as
a common drift ``c`` per unit time plus a fixed offset pattern ``r`` between
agents. Removing both leaves a series that evolves under P alone.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .dynamics import ObservationSet, damping_term, offset_vector
from .errors import NotConverged, RankDeficient
from .graph import SpectralData

log = logging.getLogger(__name__)

GRAM_COND_LIMIT = 1e12


@dataclass(frozen=True)
class SteadyStateEstimate:
    k_eps: int
    c: float
    r: np.ndarray
    z0_hat: np.ndarray  # (K, N)


def default_eps_tol(obs: ObservationSet) -> float:
    """Tolerance whose product with epsilon is ``10 sigma / sqrt(N)``.

    The steady-period test compares noisy differences, so the threshold must
    dominate the noise; with sigma = 0 it floors at 1e-6.
    """
    if obs.noise_sigma <= 0:
        return 1e-6
    return 10.0 * obs.noise_sigma / math.sqrt(obs.n) / obs.epsilon


def detect_convergence_time(obs: ObservationSet, eps_tol: float | None = None) -> int:
    """First step k0 in [2, K-1] where every relative state is within eps*eps_tol of its final value."""
    if obs.k < 3:
        raise ValueError(f"need K >= 3 observations, got {obs.k}")
    if eps_tol is None:
        eps_tol = default_eps_tol(obs)
    rel = obs.states - obs.states[:, -1:]
    close = np.all(np.abs(rel - rel[-1]) < obs.epsilon * eps_tol, axis=1)
    hits = np.flatnonzero(close[1:-1])
    if hits.size == 0:
        raise NotConverged("trajectory never reaches a steady period; extend K or raise eps_tol",
                           stage="steady_state")
    return int(hits[0]) + 2


def _window_start(k_total: int, k_eps: int) -> int:
    if k_total - k_eps >= 3:
        return k_eps
    width = max(3, math.ceil(0.2 * k_total))
    start = max(1, k_total - width + 1)
    warnings.warn(f"only {k_total - k_eps} steady samples after k_eps={k_eps}; "
                  f"averaging over the last {k_total - start + 1} samples instead",
                  RuntimeWarning, stacklevel=3)
    return min(start, k_eps)


def estimate_drift_offset(obs: ObservationSet, k_eps: int, epsilon: float | None = None):
    """Drift rate ``c`` (per unit time) and offset ``r`` (with r_N = 0) from the steady window."""
    if not 1 <= k_eps < obs.k:
        raise ValueError(f"k_eps must satisfy 1 <= k_eps < K={obs.k}, got {k_eps}")
    eps = obs.epsilon if epsilon is None else epsilon
    start = _window_start(obs.k, k_eps)
    window = obs.states[start - 1:]
    slopes = (window[-1] - window[0]) / (len(window) - 1) / eps
    c = float(np.mean(slopes))
    r = np.mean(window - window[:, -1:], axis=0)
    return c, r


def filter_time_invariant_input(obs: ObservationSet, c: float, r) -> np.ndarray:
    """``z0_hat(k) = z(k) - c * t_k * 1 - r`` with ``t_k = eps * k``."""
    t = obs.epsilon * np.arange(1, obs.k + 1)
    return obs.states - c * t[:, None] - np.asarray(r, dtype=float)[None, :]


def separate(obs: ObservationSet, eps_tol: float | None = None) -> SteadyStateEstimate:
    k_eps = detect_convergence_time(obs, eps_tol)
    c, r = estimate_drift_offset(obs, k_eps)
    log.debug("k_eps=%d c=%.6g", k_eps, c)
    return SteadyStateEstimate(k_eps, c, r, filter_time_invariant_input(obs, c, r))


def separation_error(spec: SpectralData, u, t: float) -> float:
    """``||z_0(t) - z0_hat(t)||`` with exact drift and offset removed.

    What remains is the input's transient; any multiple of 1 in the offset is
    invisible to a row-stochastic P, so the reference-free offset m is used.
    """
    return float(np.linalg.norm(damping_term(spec, u, t)))


def separation_error_bound(spec: SpectralData, u, t: float) -> float:
    """``exp(-|lambda_2| t) * ||m||``."""
    return float(np.exp(-abs(spec.eigenvalues[1]) * t) * np.linalg.norm(offset_vector(spec, u)))


def least_squares_estimate(z_series) -> np.ndarray:
    """Unconstrained least-squares P from consecutive pairs of a (K, N) series."""
    z_series = np.asarray(z_series, dtype=float)
    k_total, n = z_series.shape
    if k_total < n + 1:
        raise RankDeficient(f"need K >= N+1 = {n + 1} observations, got {k_total}")
    x, y = z_series[:-1], z_series[1:]
    sv = np.linalg.svd(x, compute_uv=False)
    if sv[-1] == 0 or (sv[0] / sv[-1]) ** 2 > GRAM_COND_LIMIT:
        raise RankDeficient("Gram matrix of the series is singular; excitation is insufficient")
    pt, *_ = np.linalg.lstsq(x, y, rcond=None)
    return pt.T
