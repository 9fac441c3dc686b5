"""Parametric latent-input families ``u(k; theta)``.

Each family knows how to evaluate itself and how to fit its coefficients to
a sampled signal by least squares.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import FitDiverged

B_GRID = np.geomspace(1e-3, 5.0, 60)  # decay rates scanned before refinement
B_CONST = 0.01  # nominal decay rate reported for a constant fit


@dataclass(frozen=True)
class FitResult:
    theta: np.ndarray
    residual: float  # sum of squared fitting residuals over the window


class ExponentialFamily:
    """``u(k) = a * exp(-b k) + c`` with ``theta = (a, b, c)``."""

    name = "exp"
    n_params = 3

    def evaluate(self, theta, k):
        a, b, c = theta
        return a * np.exp(-b * np.asarray(k, dtype=float)) + c

    def _linear_ac(self, b, k, y):
        basis = np.column_stack([np.exp(-b * k), np.ones_like(k)])
        (a, c), *_ = np.linalg.lstsq(basis, y, rcond=None)
        return np.array([a, b, c])

    def _profile(self, b, k, y):
        # best sse over (a, c) with the decay rate held at b
        return self.sse(self._linear_ac(b, k, y), k, y)

    def sse(self, theta, k, y):
        r = self.evaluate(theta, k) - y
        return float(r @ r)

    def fit(self, k, y) -> FitResult:
        """Variable projection: scan the decay rate, refine by Brent, polish all three jointly."""
        k = np.asarray(k, dtype=float)
        y = np.asarray(y, dtype=float)
        if k.size < self.n_params:
            raise ValueError(f"need at least {self.n_params} samples to fit, got {k.size}")
        if not np.all(np.isfinite(y)):
            raise FitDiverged("signal contains non-finite samples")
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            prof = np.array([self._profile(b, k, y) for b in B_GRID])
            i = int(np.nanargmin(prof))
            lo, hi = B_GRID[max(i - 1, 0)], B_GRID[min(i + 1, len(B_GRID) - 1)]
            res = optimize.minimize_scalar(lambda b: self._profile(b, k, y), bounds=(lo, hi),
                                           method="bounded", options={"xatol": 1e-12 * hi})
            theta = self._linear_ac(res.x if res.fun <= prof[i] else B_GRID[i], k, y)
            best = FitResult(theta, self.sse(theta, k, y))
            sol = optimize.least_squares(lambda t: self.evaluate(t, k) - y, theta,
                                         jac=lambda t: self._jacobian(t, k), method="lm",
                                         xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=100)
        polished = float(sol.fun @ sol.fun)
        if np.isfinite(polished) and np.all(np.isfinite(sol.x)) and polished < best.residual:
            best = FitResult(sol.x, polished)
        if not np.isfinite(best.residual):
            raise FitDiverged("exponential fit produced a non-finite residual")
        # a = 0 leaves b unidentifiable; prefer the constant member on ties
        const = float(np.mean(y))
        const_sse = float(np.sum((y - const) ** 2))
        if const_sse <= best.residual + 1e-12 * max(1.0, float(y @ y)):
            return FitResult(np.array([0.0, B_CONST, const]), const_sse)
        return best

    def _jacobian(self, theta, k):
        a, b, _ = theta
        e = np.exp(-b * k)
        return np.column_stack([e, -a * k * e, np.ones_like(k)])


class PolynomialFamily:
    """``u(k) = sum_i theta_i k^(d - i)``, degree ``d <= 2``."""

    def __init__(self, degree: int = 2):
        if degree not in (0, 1, 2):
            raise ValueError(f"polynomial degree must be 0, 1 or 2, got {degree}")
        self.degree = degree
        self.name = f"poly{degree}"

    @property
    def n_params(self) -> int:
        return self.degree + 1

    def evaluate(self, theta, k):
        return np.polyval(np.asarray(theta, dtype=float), np.asarray(k, dtype=float))

    def fit(self, k, y) -> FitResult:
        k = np.asarray(k, dtype=float)
        y = np.asarray(y, dtype=float)
        if k.size < self.n_params:
            raise ValueError(f"need at least {self.n_params} samples to fit, got {k.size}")
        basis = np.vander(k, self.n_params)
        theta, *_ = np.linalg.lstsq(basis, y, rcond=None)
        r = basis @ theta - y
        return FitResult(theta, float(r @ r))


def get_family(name: str):
    if name in ("exp", "exponential"):
        return ExponentialFamily()
    if name.startswith("poly"):
        degree = int(name[4:]) if len(name) > 4 else 2
        return PolynomialFamily(degree)
    raise ValueError(f"unknown input family {name!r}")
