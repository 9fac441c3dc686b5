"""Error measures for estimated interaction matrices and latent inputs."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def default_tau(p_true) -> float:
    """5% of the mean magnitude of the true off-diagonal (edge) entries."""
    p = np.asarray(p_true, dtype=float)
    off = p[~np.eye(p.shape[0], dtype=bool)]
    nz = np.abs(off[off != 0])
    return 0.05 * float(nz.mean()) if nz.size else 0.0


def structure_error(p_hat, p_true, tau: float | None = None) -> float:
    """Fraction of entries whose support (|entry| > tau) differs between the two matrices."""
    p_hat, p_true = _pair(p_hat, p_true)
    if tau is None:
        tau = default_tau(p_true)
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    mismatch = (np.abs(p_hat) > tau) != (np.abs(p_true) > tau)
    return float(mismatch.mean())


def magnitude_error(p_hat, p_true) -> float:
    """``||P_hat - P||_F^2 / ||P||_F^2``."""
    p_hat, p_true = _pair(p_hat, p_true)
    denom = float(np.sum(p_true ** 2))
    if denom == 0:
        raise ZeroDivisionError("reference matrix has zero Frobenius norm")
    return float(np.sum((p_hat - p_true) ** 2)) / denom


def iteration_difference(p_i, p_prev) -> float:
    """Relative squared Frobenius change between consecutive iterates."""
    return magnitude_error(p_i, p_prev)


def fitted_input_matrix(theta_hats: dict, injection_times: dict, family, k_total: int, n: int):
    """Fitted signals ``u_j(k; theta_j)`` for k = 1..K; zero before injection and off V_u."""
    ks = np.arange(1, k_total + 1)
    out = np.zeros((k_total, n))
    for j, theta in theta_hats.items():
        k_u = injection_times.get(j, 1)
        out[:, j] = np.where(ks >= k_u, family.evaluate(theta, ks), 0.0)
    return out


def _mean_sq(a, b, k_total, n):
    a, b = _pair(a, b)
    if a.shape != (k_total, n):
        raise ValueError(f"signals must have shape ({k_total}, {n}), got {a.shape}")
    gap = a - b
    # unobservable pointwise estimates (NaN) contribute nothing; the average stays over KN
    return float(np.sum(np.where(np.isnan(gap), 0.0, gap) ** 2)) / (k_total * n)


def input_param_error(u_true, theta_hats: dict, family, k_total: int, n: int,
                      injection_times: dict | None = None) -> float:
    """Mean squared gap between true inputs and fitted ones over all j and k = 1..K."""
    fitted = fitted_input_matrix(theta_hats, injection_times or {}, family, k_total, n)
    return _mean_sq(u_true, fitted, k_total, n)


def fitting_error(u_hat, theta_hats: dict, family, k_total: int, n: int,
                  injection_times: dict | None = None) -> float:
    """As ``input_param_error`` but against the pointwise estimates."""
    fitted = fitted_input_matrix(theta_hats, injection_times or {}, family, k_total, n)
    return _mean_sq(u_hat, fitted, k_total, n)


@dataclass
class ErrorReport:
    psi_s: float
    psi_m: float
    sign_threshold: float
    psi_theta: float | None = None
    psi_f: float | None = None
    psi_d_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(p_hat, p_true, tau: float | None = None) -> ErrorReport:
    tau = default_tau(p_true) if tau is None else tau
    return ErrorReport(structure_error(p_hat, p_true, tau), magnitude_error(p_hat, p_true), tau)


def write_rows(path, rows: list[dict]) -> None:
    """CSV with the union of keys as header, in first-seen order."""
    keys: list[str] = []
    for row in rows:
        keys.extend(k for k in row if k not in keys)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)
