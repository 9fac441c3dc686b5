"""Topology inference under a time-varying latent input.

Stage one finds the first injected agent from a jump in its increment ratio.
Stage two fits an initial P on the input-free prefix and flags every other
agent whose one-step prediction residual suddenly dominates its predicted
increment. Stage three alternates: estimate the input pointwise from
prediction residuals, fit the parametric family, rebuild an input-free
series, refit P, until consecutive estimates agree to ``delta_d``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ObservationSet
from .errors import (DegenerateDenominator, FitDiverged, LoopDiverged, MaxIterations, NotConverged,
                     RankWarning, TimeInvariantClassification, TopoInferError)
from .families import get_family
from .metrics import fitting_error, iteration_difference
from .solver import WS1, RegressionProblem, solve, weight_schedule
from .totia import InferenceResult, ToTiaConfig, default_rho, two_layer_estimate

log = logging.getLogger(__name__)

OBSERVED, FILTERED = "observed", "filtered"


@dataclass(frozen=True)
class IeTiaConfig:
    lipschitz: float | None = None
    delta_d: float = 0.015
    family: str = "exp"
    max_iter: int = 50
    min_consecutive: int = 1
    guard: float | None = None  # None: max(1e-9, 3 sigma)
    p_step: ToTiaConfig = field(default_factory=ToTiaConfig)
    regressor: str = OBSERVED
    # stop once the rebuilt series exceeds this multiple of the data's magnitude
    divergence_factor: float = 1e3


@dataclass
class IdentificationResult:
    q: int | None
    k_uq: int | None
    injected: dict = field(default_factory=dict)
    classified_time_invariant: bool = False


@dataclass
class IterationRecord:
    i: int
    psi_d: float
    p_hat: np.ndarray
    theta_hats: dict
    u_hat_norm: float
    psi_f: float


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    converged: bool = False
    max_iter_abort: bool = False
    diverged: bool = False
    solver_not_converged: int = 0

    @property
    def i_t(self) -> int:
        return len(self.records)

    @property
    def psi_d(self) -> list[float]:
        return [r.psi_d for r in self.records]

    def to_dict(self) -> dict:
        return {
            "i_t": self.i_t,
            "converged": self.converged,
            "max_iter_abort": self.max_iter_abort,
            "diverged": self.diverged,
            "solver_not_converged": self.solver_not_converged,
            "psi_d": self.psi_d,
            "psi_f": [r.psi_f for r in self.records],
        }


def default_guard(obs: ObservationSet) -> float:
    return max(1e-9, 3.0 * obs.noise_sigma)


def _z(obs, k, j=None):
    row = obs.states[k - 1]
    return row if j is None else row[j]


def h1(obs: ObservationSet, j: int, k: int, l: float, guard: float | None = None) -> float:
    """``|dz_j(k) / dz_j(k-1)| - 1/l - 1`` with ``dz_j(k) = z_j(k) - z_j(k-1)``."""
    if l <= 0:
        raise ValueError("Lipschitz bound must be positive")
    if not 3 <= k <= obs.k:
        raise ValueError(f"h1 needs 3 <= k <= K={obs.k}, got {k}")
    guard = default_guard(obs) if guard is None else guard
    den = _z(obs, k - 1, j) - _z(obs, k - 2, j)
    if abs(den) < guard:
        raise DegenerateDenominator(f"increment of agent {j} at step {k - 1} is below {guard:g}")
    return abs((_z(obs, k, j) - _z(obs, k - 1, j)) / den) - 1.0 / l - 1.0


def _safe(fn, *args):
    try:
        return fn(*args)
    except DegenerateDenominator:
        return None


def _h1_sign(obs, j, k, l, guard):
    """-1 for no jump, +1 for a jump, 0 when the sample carries no evidence.

    A sub-guard previous increment followed by a clear increment is a jump
    from rest (the unguarded ratio would be huge); two sub-guard increments
    in a row are read as "no jump".
    """
    value = _safe(h1, obs, j, k, l, guard)
    if value is not None:
        return -1 if value < 0 else 1
    guard = default_guard(obs) if guard is None else guard
    step = abs(_z(obs, k, j) - _z(obs, k - 1, j))
    if step >= (1.0 + 1.0 / l) * guard:
        return 1
    return -1 if step < guard else 0


def identify_initial_injection(obs: ObservationSet, l: float, min_consecutive: int = 1,
                               guard: float | None = None) -> IdentificationResult:
    """First step k0 where some agent has h1 < 0 at k0 and h1 >= 0 at k0+1.

    With ``min_consecutive = m`` the m samples ending at k0 must all read
    "no jump". Raises ``TimeInvariantClassification`` when no step qualifies.
    """
    if obs.k < 4:
        raise ValueError(f"need K >= 4 observations, got {obs.k}")
    m = max(1, int(min_consecutive))
    for k0 in range(3, obs.k):
        hits = []
        for j in range(obs.n):
            if _h1_sign(obs, j, k0 + 1, l, guard) <= 0:
                continue
            prior = [_h1_sign(obs, j, k, l, guard) for k in range(k0 - m + 1, k0 + 1) if k >= 3]
            if len(prior) == m and all(v < 0 for v in prior):
                hits.append(j)
        if hits:
            return IdentificationResult(hits[0], k0, {hits[0]: k0})
    raise TimeInvariantClassification(
        "no injection pattern found: the latent input looks time-invariant; use TO-TIA instead")


def h2(obs: ObservationSet, p_hat0, j: int, k: int, l: float, guard: float | None = None) -> float:
    """``|predicted increment / prediction residual| - l`` for agent j at step k."""
    if not 2 <= k <= obs.k:
        raise ValueError(f"h2 needs 2 <= k <= K={obs.k}, got {k}")
    guard = default_guard(obs) if guard is None else guard
    pred = float(np.asarray(p_hat0)[j] @ _z(obs, k - 1))
    den = _z(obs, k, j) - pred
    if abs(den) < guard:
        raise DegenerateDenominator(f"prediction residual of agent {j} at step {k} is below {guard:g}")
    return abs((pred - _z(obs, k - 1, j)) / den) - l


def identify_injected_set(obs: ObservationSet, p_hat0, l: float, k_uq: int, q: int | None = None,
                          guard: float | None = None) -> IdentificationResult:
    """Injection time of every agent: first k0 >= k_uq with h2 > 0 at k0 and h2 <= 0 at k0+1.

    A degenerate residual at k0 means no input is present, which counts as
    h2 > 0; a degenerate residual at k0+1 is no detection.
    """
    injected = {} if q is None else {q: k_uq}
    for j in range(obs.n):
        if j == q:
            continue
        for k0 in range(max(k_uq, 2), obs.k):
            after = _safe(h2, obs, p_hat0, j, k0 + 1, l, guard)
            if after is None or after > 0:
                continue
            before = _safe(h2, obs, p_hat0, j, k0, l, guard)
            if before is None or before > 0:
                injected[j] = k0
                break
    return IdentificationResult(q, k_uq, dict(sorted(injected.items())))


def estimate_input(obs: ObservationSet, p_hat_prev, injected_times: dict) -> np.ndarray:
    """Pointwise input estimates from one-step prediction residuals.

    Row ``k - 1`` holds the estimate of ``u(k)`` for k = 1..K, i.e. the value
    entering ``z(k + 1)``. ``u(K)`` is unobservable and left as NaN for
    injected agents; every other entry before injection or off the injected
    set is zero.
    """
    p_hat_prev = np.asarray(p_hat_prev, dtype=float)
    out = np.zeros((obs.k, obs.n))
    resid = (obs.states[1:] - obs.states[:-1] @ p_hat_prev.T) / obs.epsilon  # row m-1 -> u(m)
    for j, k_u in injected_times.items():
        out[k_u - 1:obs.k - 1, j] = resid[k_u - 1:, j]
        out[obs.k - 1, j] = np.nan
    return out


def fit_input_params(u_hat_signal, family, fit_window) -> np.ndarray:
    """Least-squares coefficients of ``family`` on ``u_hat_signal`` over steps ``fit_window``."""
    ks = np.asarray(fit_window, dtype=float)
    y = np.asarray(u_hat_signal, dtype=float)
    ok = np.isfinite(y)
    if ok.sum() < family.n_params:
        raise FitDiverged(f"only {int(ok.sum())} finite input samples after injection; "
                          f"{family.n_params} needed", stage="input_fit")
    return family.fit(ks[ok], y[ok]).theta


def reconstruct_filtered(obs: ObservationSet, p_hat_prev, theta_hats: dict, injected_times: dict,
                         family, regressor: str = OBSERVED) -> np.ndarray:
    """Input-free series: raw data up to injection, one corrected step, then one-step predictions.

    After ``k_u + 1`` an injected agent's entry is ``P_hat[j] @ x(k - 1)``,
    where ``x`` is the observed state (``regressor="observed"``) or the
    series being rebuilt (``"filtered"``). Only the observed variant returns
    ``z(k) - eps * u(k - 1)`` exactly when ``P_hat`` and the fit are exact.
    """
    if regressor not in (OBSERVED, FILTERED):
        raise ValueError(f"regressor must be {OBSERVED!r} or {FILTERED!r}")
    p_hat_prev = np.asarray(p_hat_prev, dtype=float)
    out = np.array(obs.states, dtype=float)
    source = obs.states if regressor == OBSERVED else out
    for k in range(2, obs.k + 1):
        for j, k_u in injected_times.items():
            if k == k_u + 1:
                out[k - 1, j] = obs.states[k - 1, j] - obs.epsilon * float(family.evaluate(theta_hats[j], k_u))
            elif k > k_u + 1:
                out[k - 1, j] = p_hat_prev[j] @ source[k - 2]
    return out


def estimate_lipschitz(obs: ObservationSet, k_stop: int | None = None) -> float:
    """1.5 times the largest absolute increment over steps before ``k_stop``.

    Without a known injection time the first quarter of the record (at
    least three samples) is used.
    """
    if k_stop is None:
        k_stop = max(3, math.ceil(obs.k / 4))
    inc = np.abs(np.diff(obs.states[:k_stop], axis=0))
    return 1.5 * float(inc.max()) if inc.size and inc.max() > 0 else 1.0


def initial_estimate(obs: ObservationSet, k_uq: int, config: ToTiaConfig):
    """P_hat^(0) from the input-free prefix z(1..k_uq).

    With k_uq <= N the power layers are unavailable and a WS1-weighted
    single-layer fit is used; otherwise the two-layer fit.
    """
    prefix = np.asarray(obs.states[:k_uq], dtype=float)
    if k_uq < 2:
        raise TopoInferError("no input-free pairs before the first injection", stage="initial_estimate")
    try:
        if k_uq <= obs.n:
            rho = default_rho(prefix) if config.rho is None else config.rho
            w = weight_schedule(k_uq - 1, WS1).weights
            problem = RegressionProblem(obs.n, prefix[:-1], prefix[1:], w, [], rho, config.beta)
            return solve(problem, tol=config.tol, max_iter=config.max_iter).solution, "single_layer"
        return two_layer_estimate(prefix, config)[0], "two_layer"
    except NotConverged as exc:
        if exc.report is None:
            raise
        kind = "single_layer" if k_uq <= obs.n else "two_layer"
        return exc.report.solution, f"{kind}_unconverged"


def iterate_estimates(obs: ObservationSet, p_init, injected: dict, family, p_config: ToTiaConfig,
                      delta_d: float = 0.015, max_iter: int = 50, regressor: str = OBSERVED,
                      divergence_factor: float = 1e3):
    """Alternate input estimation and refitting of P from a fixed injection map.

    Returns ``(P_hat, theta_hats, u_hat, IterationTrace)``; the trace flags a
    ``max_iter`` abort or a divergence instead of raising. Consensus keeps the
    input-free states inside the range of the data, so a rebuilt series larger
    than ``divergence_factor`` times the data magnitude stops the loop before
    it is refitted.
    """
    limit = divergence_factor * (np.abs(obs.states).max() + 1.0)
    p_prev = np.asarray(p_init, dtype=float)
    trace = IterationTrace()
    thetas: dict = {}
    u_hat = np.zeros((obs.k, obs.n))
    for i in range(1, max_iter + 1):
        u_hat = estimate_input(obs, p_prev, injected)
        thetas = {}
        for j, k_u in injected.items():
            ks = np.arange(k_u, obs.k + 1)
            thetas[j] = fit_input_params(u_hat[k_u - 1:, j], family, ks)
        psi_f = fitting_error(u_hat, thetas, family, obs.k, obs.n, injected)
        z_phi = reconstruct_filtered(obs, p_prev, thetas, injected, family, regressor)
        if not np.all(np.abs(z_phi) <= limit):
            trace.diverged = True
            break
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            try:
                p_new = two_layer_estimate(z_phi, p_config)[0]
            except NotConverged as exc:
                if exc.report is None:
                    raise
                # the ADMM iterate is row-stochastic even when unconverged; keep going
                p_new = exc.report.solution
                trace.solver_not_converged += 1
        psi_d = iteration_difference(p_new, p_prev)
        trace.records.append(IterationRecord(i, psi_d, p_new, dict(thetas),
                                             float(np.linalg.norm(np.nan_to_num(u_hat))), psi_f))
        p_prev = p_new
        if psi_d < delta_d:
            trace.converged = True
            break
    if not (trace.converged or trace.diverged):
        trace.max_iter_abort = True
    return p_prev, thetas, u_hat, trace


def ie_tia(obs: ObservationSet, l: float | None = None, delta_d: float | None = None,
           family=None, config: IeTiaConfig | None = None, injected: dict | None = None):
    """Run identification and the alternating estimation loop.

    Returns ``(InferenceResult, IterationTrace)``. Raises
    ``TimeInvariantClassification`` when no injection is detected and
    ``MaxIterations`` (carrying the partial result) when the loop does not
    settle within ``config.max_iter`` iterations, or its subclass
    ``LoopDiverged`` when the rebuilt series blows up. A known ``injected`` map
    (agent -> injection step) skips identification.
    """
    config = config or IeTiaConfig()
    if obs.k < 4:
        raise ValueError(f"need K >= 4 observations, got {obs.k}")
    delta_d = config.delta_d if delta_d is None else delta_d
    if delta_d <= 0:
        raise ValueError("delta_d must be positive")
    if family is None or isinstance(family, str):
        family = get_family(family or config.family)
    if l is None:
        l = config.lipschitz if config.lipschitz is not None else estimate_lipschitz(obs)

    if injected:
        k_uq = min(injected.values())
        q = min(j for j, k in injected.items() if k == k_uq)
        first = IdentificationResult(q, k_uq, dict(injected))
    else:
        first = identify_initial_injection(obs, l, config.min_consecutive, config.guard)
    if first.k_uq < 3:
        raise TopoInferError(f"injection at step {first.k_uq} leaves no input-free data",
                             stage="identification")
    rank_warnings = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankWarning)
        p_prev, init_kind = initial_estimate(obs, first.k_uq, config.p_step)
        rank_warnings.extend(str(w.message) for w in caught if issubclass(w.category, RankWarning))
    if injected:
        ident = first
    else:
        ident = identify_injected_set(obs, p_prev, l, first.k_uq, first.q, config.guard)
    log.debug("q=%s k_uq=%s injected=%s", ident.q, ident.k_uq, ident.injected)

    p_init = p_prev
    p_prev, thetas, u_hat, trace = iterate_estimates(obs, p_init, ident.injected, family,
                                                     config.p_step, delta_d, config.max_iter,
                                                     config.regressor, config.divergence_factor)

    result = InferenceResult(
        p_prev,
        intermediate={"p_hat0": p_init, "trace": trace},
        diagnostics={
            "q": ident.q,
            "k_uq": ident.k_uq,
            "injected": {int(j): int(k) for j, k in ident.injected.items()},
            "lipschitz": l,
            "delta_d": delta_d,
            "initial_estimate": init_kind,
            "rank_warnings": rank_warnings,
            "psi_d": trace.psi_d,
        },
        iterations=trace.i_t,
        input_estimates={"theta": {int(j): np.asarray(t).tolist() for j, t in thetas.items()},
                         "u_hat": u_hat, "family": family.name},
    )
    if trace.diverged:
        raise LoopDiverged(f"rebuilt input-free series diverged after {trace.i_t} iterations",
                           stage="iteration", result=(result, trace))
    if trace.max_iter_abort:
        raise MaxIterations(f"no convergence to delta_d={delta_d} in {config.max_iter} iterations",
                            stage="iteration", result=(result, trace))
    return result, trace
