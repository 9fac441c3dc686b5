"""Row-stochastic, L1-regularized weighted least squares for interaction matrices.

Every problem solved here has the form::

    min_P  sum_k a_k ||y_k - P x_k||^2 + beta * sum_s ||A_s - P B_s||_F^2
           + rho * sum_ij |P_ij|
    s.t.   P 1 = 1

The smooth part is ``tr(P H P^T) - 2 tr(G P^T) + const`` with one Gram matrix
``H`` shared by all rows, so the affine constraint is removed by writing every
row as ``1/N + Z y`` with ``Z`` an orthonormal basis of the complement of 1.
With ``rho = 0`` that reduced problem is solved in closed form; otherwise an
ADMM splitting alternates the constrained quadratic step with entrywise
soft-thresholding.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import NotConverged, RankWarning

WS1, WS2, WS3 = "ws1", "ws2", "ws3"
WEIGHT_KINDS = (WS1, WS2, WS3)


@dataclass(frozen=True)
class WeightSchedule:
    kind: str
    weights: np.ndarray


def weight_schedule(horizon: int, kind: str = WS1) -> WeightSchedule:
    """Decreasing (ws1), increasing (ws2) or uniform (ws3) weights summing to one."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    kind = kind.lower()
    ramp = np.arange(horizon, 0, -1, dtype=float)
    if kind == WS1:
        w = ramp
    elif kind == WS2:
        w = ramp[::-1].copy()
    elif kind == WS3:
        w = np.ones(horizon)
    else:
        raise ValueError(f"unknown weight kind {kind!r}")
    return WeightSchedule(kind, w / w.sum())


@dataclass
class RegressionProblem:
    """Snapshot pairs ``(x_k, y_k)`` are stored row-wise in ``x`` and ``y``."""

    n: int
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    weights: np.ndarray | None = None
    frobenius_terms: list = field(default_factory=list)
    rho: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        n = self.n
        if self.x is not None:
            self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
            self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
            if self.x.shape != self.y.shape or self.x.shape[1] != n:
                raise ValueError(f"snapshot blocks {self.x.shape}/{self.y.shape} do not match N={n}")
            if self.weights is None:
                self.weights = np.ones(len(self.x))
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (len(self.x),):
                raise ValueError("one weight per snapshot pair is required")
        for a, b in self.frobenius_terms:
            if np.shape(a) != (n, n) or np.shape(b) != (n, n):
                raise ValueError("Frobenius terms must be N x N")
        if self.x is None and not self.frobenius_terms:
            raise ValueError("problem has neither snapshot pairs nor Frobenius terms")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")

    def quadratic(self):
        """Return ``(H, G, c)`` with smooth objective ``tr(PHP^T) - 2tr(GP^T) + c``."""
        n = self.n
        h = np.zeros((n, n))
        g = np.zeros((n, n))
        c = 0.0
        if self.x is not None:
            wx = self.x * self.weights[:, None]
            h += wx.T @ self.x
            g += self.y.T @ wx
            c += float(np.sum(self.weights * np.sum(self.y ** 2, axis=1)))
        for a, b in self.frobenius_terms:
            h += self.beta * (b @ b.T)
            g += self.beta * (a @ b.T)
            c += self.beta * float(np.sum(a * a))
        return h, g, c

    def objective(self, p) -> float:
        h, g, c = self.quadratic()
        return _objective(p, h, g, c, self.rho)


def _objective(p, h, g, c, rho):
    return float(np.sum((p @ h) * p) - 2.0 * np.sum(g * p) + c + rho * np.abs(p).sum())


@dataclass(frozen=True)
class SolverReport:
    solution: np.ndarray
    objective_value: float
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    rank_deficient: bool = False
    trace: np.ndarray | None = None  # augmented Lagrangian per ADMM iteration
    increment_trace: np.ndarray | None = None  # mu (||dq||^2 + ||du||^2) per iteration


def _complement_basis(n):
    # orthonormal basis of the hyperplane orthogonal to the all-ones vector
    q, _ = np.linalg.qr(np.column_stack([np.ones(n), np.eye(n)[:, : n - 1]]))
    return q[:, 1:]


class _ReducedLeastSquares:
    """Minimizer of ``sum ||r_m - P x_m||^2 + mu/2 ||P - V||_F^2`` on ``P 1 = 1``.

    Rows of P are ``1/N + Z y``. The stacked, weighted design is factored by
    SVD once, so conditioning follows the data rather than its Gram matrix.
    """

    def __init__(self, design, targets):
        n = design.shape[1]
        self.n = n
        self.z = _complement_basis(n)
        self.j = np.full((n, n), 1.0 / n)
        m = design @ self.z
        resid = targets - design @ self.j.T
        u, sv, vt = linalg.svd(m, full_matrices=True)
        dim = n - 1
        self.sv = np.zeros(dim)
        self.sv[: min(len(sv), dim)] = sv[:dim]
        self.v = vt.T
        # data projected on the right singular vectors; rows beyond rank(m) are zero
        self.proj = np.zeros((dim, n))
        k = min(len(sv), dim)
        self.proj[:k] = sv[:k, None] * (u[:, :k].T @ resid)
        top = self.sv.max(initial=0.0)
        cut = max(m.shape) * np.finfo(float).eps * top
        self.keep = self.sv > cut
        self.rank_deficient = bool(n > 1 and not self.keep.all())

    @property
    def gram_eigenvalues(self):
        return self.sv ** 2

    def solve(self, v=None, mu=0.0):
        s2 = self.sv ** 2
        if mu > 0:
            target = (np.asarray(v) - self.j) @ self.z  # (N, N-1), reduced prox centre
            num = self.proj + 0.5 * mu * (self.v.T @ target.T)
            coef = num / (s2 + 0.5 * mu)[:, None]
        else:
            inv = np.where(self.keep, 1.0 / np.where(self.keep, s2, 1.0), 0.0)
            coef = self.proj * inv[:, None]
        y_t = self.v @ coef  # (N-1, N): transpose of the reduced coordinates
        return self.j + y_t.T @ self.z.T


def _stacked_design(problem):
    blocks_x, blocks_y = [], []
    if problem.x is not None:
        sw = np.sqrt(problem.weights)[:, None]
        blocks_x.append(sw * problem.x)
        blocks_y.append(sw * problem.y)
    for a, b in problem.frobenius_terms:
        # ||A - P B||_F^2 is a sum over columns of B paired with columns of A
        sb = np.sqrt(problem.beta)
        blocks_x.append(sb * np.asarray(b, dtype=float).T)
        blocks_y.append(sb * np.asarray(a, dtype=float).T)
    return np.vstack(blocks_x), np.vstack(blocks_y)


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _traces(record, trace, incs):
    return (np.array(trace), np.array(incs)) if record else (None, None)


def solve(problem: RegressionProblem, tol: float = 1e-8, max_iter: int = 10_000,
          burn_in: int = 2000, record_trace: bool = False, warn_rank: bool = True,
          mu0: float | None = None) -> SolverReport:
    """Minimize the problem's objective subject to ``P 1 = 1``.

    Raises ``NotConverged`` (carrying the last report) when ADMM exhausts
    ``max_iter``. Rank-deficient designs get the minimum-Frobenius-norm
    solution and a ``RankWarning``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    h, g, c = problem.quadratic()
    red = _ReducedLeastSquares(*_stacked_design(problem))
    if red.rank_deficient and warn_rank:
        warnings.warn("design is rank deficient; returning the minimum-norm solution",
                      RankWarning, stacklevel=2)
    p = red.solve()
    if problem.rho == 0.0:
        return SolverReport(p, _objective(p, h, g, c, 0.0), 0, 0.0, 0.0, True, red.rank_deficient)

    n = problem.n
    rho = problem.rho
    mu = max(2.0 * float(np.mean(red.gram_eigenvalues)), 1e-8) if mu0 is None else mu0
    q = _soft(p, rho / mu)
    u = np.zeros_like(p)
    trace, incs = [], []
    r_norm = s_norm = np.inf
    for it in range(1, max_iter + 1):
        p = red.solve(q - u, mu)
        q_old = q
        q = _soft(p + u, rho / mu)
        u_old = u
        u = u + p - q
        r_norm = float(np.linalg.norm(p - q))
        s_norm = float(mu * np.linalg.norm(q - q_old))
        if record_trace:
            aug = (_objective(p, h, g, c, 0.0) + rho * np.abs(q).sum()
                   + 0.5 * mu * (np.sum((p - q + u) ** 2) - np.sum(u ** 2)))
            trace.append(aug)
            # non-increasing while mu is fixed (He and Yuan's contraction for convex ADMM)
            incs.append(mu * (np.sum((q - q_old) ** 2) + np.sum((u - u_old) ** 2)))
        eps_pri = n * tol + tol * max(np.linalg.norm(p), np.linalg.norm(q))
        eps_dual = n * tol + tol * mu * np.linalg.norm(u)
        if r_norm < eps_pri and s_norm < eps_dual:
            return SolverReport(p, _objective(p, h, g, c, rho), it, r_norm, s_norm, True,
                                red.rank_deficient, *_traces(record_trace, trace, incs))
        if it <= burn_in:
            if r_norm > 10.0 * s_norm:
                mu *= 2.0
                u /= 2.0
            elif s_norm > 10.0 * r_norm:
                mu /= 2.0
                u *= 2.0
    report = SolverReport(p, _objective(p, h, g, c, rho), max_iter, r_norm, s_norm, False,
                          red.rank_deficient, *_traces(record_trace, trace, incs))
    raise NotConverged(f"ADMM did not converge in {max_iter} iterations", stage="solver",
                       report=report)


def snapshot_problem(series, lag: int = 1, weights=None, rho: float = 0.0,
                     frobenius_terms=(), beta: float = 1.0) -> RegressionProblem:
    """Pairs ``(z(k), z(k + lag))`` from a (K, N) series, k = 1..K-lag."""
    series = np.asarray(series, dtype=float)
    x, y = series[:-lag], series[lag:]
    return RegressionProblem(series.shape[1], x, y, weights, list(frobenius_terms), rho, beta)


def solve_power_layer(z_series, s: int, tol: float = 1e-8) -> SolverReport:
    """Unweighted row-stochastic fit of ``P^s`` from lag-``s`` pairs of the series."""
    z_series = np.asarray(z_series, dtype=float)
    if z_series.shape[0] - s < 1:
        raise ValueError(f"series of length {z_series.shape[0]} has no lag-{s} pairs")
    return solve(snapshot_problem(z_series, lag=s), tol=tol)
