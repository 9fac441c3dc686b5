"""Topology inference under a time-invariant latent input.

Pipeline: find the steady period, strip the drift/offset signature of the
input, fit every matrix power ``P^s`` separately (first layer), then fit P
against the snapshots and the power estimates together (second layer).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import ObservationSet
from .errors import RankWarning, TopoInferError
from .separation import separate
from .solver import WS1, WS2, WS3, RegressionProblem, solve, solve_power_layer, weight_schedule

DEFAULT_S_MAX = 10


@dataclass(frozen=True)
class ToTiaConfig:
    rho: float | None = None  # None: 1e-3 * ||data||_F / N
    beta: float = 0.5
    weight_kind: str = WS1
    eps_tol: float | None = None
    tol: float = 1e-8
    max_iter: int = 10_000
    s_max: int | None = None
    beta_normalize: bool = False
    weighted_power_layers: bool = False


@dataclass
class InferenceResult:
    p_hat: np.ndarray
    intermediate: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    iterations: int = 1
    input_estimates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        diag = {}
        for key, val in self.diagnostics.items():
            diag[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return {"p_hat": self.p_hat.tolist(), "iterations": self.iterations, "diagnostics": diag}


def default_rho(series) -> float:
    series = np.asarray(series)
    return 1e-3 * float(np.linalg.norm(series)) / series.shape[1]


def power_layers(series, s_max: int, tol: float = 1e-8, weights_kind: str | None = None) -> dict:
    """First layer: ``{s: P_hat^s}``; rank-deficient layers are dropped."""
    layers = {}
    for s in range(1, s_max + 1):
        with warnings.catch_warnings():
            warnings.simplefilter("error", RankWarning)
            try:
                if weights_kind is None:
                    layers[s] = solve_power_layer(series, s, tol=tol).solution
                else:
                    x, y = series[:-s], series[s:]
                    w = weight_schedule(len(x), weights_kind).weights
                    layers[s] = solve(RegressionProblem(series.shape[1], x, y, w), tol=tol).solution
            except RankWarning:
                continue
    return layers


def two_layer_estimate(series, config: ToTiaConfig, s_max: int | None = None):
    """Second-layer fit of P on a (K, N) series; returns ``(P_hat, layers, report)``."""
    series = np.asarray(series, dtype=float)
    k_total, n = series.shape
    if s_max is None:
        s_max = config.s_max if config.s_max is not None else min(k_total - n, DEFAULT_S_MAX)
    s_max = max(0, min(s_max, k_total - 1))
    rho = default_rho(series) if config.rho is None else config.rho

    layers = {}
    terms = []
    if config.beta > 0 and s_max > 0:
        wk = config.weight_kind if config.weighted_power_layers else None
        layers = power_layers(series, s_max, config.tol, wk)
        for s, ps in sorted(layers.items()):
            prev = np.eye(n) if s == 1 else layers.get(s - 1)
            if prev is not None:
                terms.append((ps, prev))
    beta = config.beta
    if config.beta_normalize and terms:
        beta /= len(terms)

    weights = weight_schedule(k_total - 1, config.weight_kind).weights
    problem = RegressionProblem(n, series[:-1], series[1:], weights, terms, rho, beta)
    report = solve(problem, tol=config.tol, max_iter=config.max_iter)
    return report.solution, layers, report


def to_tia(obs: ObservationSet, epsilon: float | None = None,
           config: ToTiaConfig | None = None) -> InferenceResult:
    config = config or ToTiaConfig()
    if epsilon is not None and epsilon != obs.epsilon:
        obs = replace(obs, epsilon=float(epsilon))
    if obs.k < obs.n + 2:
        raise TopoInferError(f"TO-TIA needs K >= N + 2 = {obs.n + 2} observations, got {obs.k}",
                             stage="precondition")
    try:
        steady = separate(obs, config.eps_tol)
    except TopoInferError as exc:
        exc.stage = f"separation/{exc.stage}"
        raise
    try:
        p_hat, layers, report = two_layer_estimate(steady.z0_hat, config)
    except TopoInferError as exc:
        exc.stage = f"optimization/{exc.stage}"
        raise
    diagnostics = {
        "k_eps": steady.k_eps,
        "c": steady.c,
        "r": steady.r,
        "weight_kind": config.weight_kind,
        "weights": weight_schedule(obs.k - 1, config.weight_kind).weights,
        "beta": config.beta,
        "power_layers": sorted(layers),
        "solver_iterations": report.iterations,
        "solver_converged": report.converged,
        "objective": report.objective_value,
    }
    return InferenceResult(p_hat, layers, diagnostics, 1, {})


def baseline_a1(obs, epsilon=None, config: ToTiaConfig | None = None) -> InferenceResult:
    """TO-TIA without the power-layer terms (beta = 0)."""
    return to_tia(obs, epsilon, replace(config or ToTiaConfig(), beta=0.0))


def baseline_a2(obs, epsilon=None, config: ToTiaConfig | None = None) -> InferenceResult:
    """TO-TIA with increasing snapshot weights."""
    return to_tia(obs, epsilon, replace(config or ToTiaConfig(), weight_kind=WS2))


def baseline_a3(obs, epsilon=None, config: ToTiaConfig | None = None) -> InferenceResult:
    """TO-TIA with uniform snapshot weights."""
    return to_tia(obs, epsilon, replace(config or ToTiaConfig(), weight_kind=WS3))
