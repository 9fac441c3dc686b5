"""Consensus trajectories under latent inputs, plus closed-form oracles.

Observations are indexed k = 1..K and stored row-wise, so ``states[k - 1]``
is the noisy state vector observed at step k. The true state starts from
``z_init`` at k = 0 and follows ``z(k) = P z(k-1) + eps * u(k-1)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleInput
from .families import ExponentialFamily, get_family
from .graph import InteractionMatrix, SpectralData

TIME_INVARIANT = "time_invariant"
TIME_VARYING = "time_varying"


@dataclass(frozen=True)
class LatentInputModel:
    """Per-agent latent inputs.

    Time-invariant inputs are a constant vector active from k = 0. Time-varying
    inputs follow ``family`` with coefficients ``params[j]`` from step
    ``injection_times[j]`` on and are zero before it.
    """

    n: int
    kind: str = TIME_INVARIANT
    constant: np.ndarray | None = None
    injection_times: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    family: object = field(default_factory=ExponentialFamily)
    lipschitz_bound: float | None = None

    @property
    def injected_set(self) -> list[int]:
        if self.kind == TIME_INVARIANT:
            if self.constant is None:
                return []
            return [int(j) for j in np.flatnonzero(self.constant)]
        return sorted(self.injection_times)

    def signal(self, j: int, k):
        k = np.asarray(k, dtype=float)
        if self.kind == TIME_INVARIANT:
            value = 0.0 if self.constant is None else float(self.constant[j])
            return np.full(k.shape, value)
        if j not in self.injection_times:
            return np.zeros(k.shape)
        out = self.family.evaluate(self.params[j], k)
        return np.where(k >= self.injection_times[j], out, 0.0)

    def matrix(self, k_max: int) -> np.ndarray:
        """Input values for k = 0..k_max as an array of shape (k_max + 1, n)."""
        ks = np.arange(k_max + 1)
        return np.column_stack([self.signal(j, ks) for j in range(self.n)])

    def describe(self) -> dict:
        if self.kind == TIME_INVARIANT:
            const = np.zeros(self.n) if self.constant is None else self.constant
            return {"kind": self.kind, "constant": np.asarray(const).tolist()}
        return {
            "kind": self.kind,
            "family": self.family.name,
            "injection_times": {str(j): int(k) for j, k in self.injection_times.items()},
            "params": {str(j): np.asarray(t, dtype=float).tolist() for j, t in self.params.items()},
            "lipschitz_bound": self.lipschitz_bound,
        }


def zero_input(n: int) -> LatentInputModel:
    return LatentInputModel(n, TIME_INVARIANT, np.zeros(n))


def constant_input(u) -> LatentInputModel:
    u = np.asarray(u, dtype=float)
    return LatentInputModel(u.size, TIME_INVARIANT, u)


@dataclass(frozen=True)
class ObservationSet:
    states: np.ndarray  # shape (K, N); row k-1 holds the observation at step k
    epsilon: float
    noise_sigma: float = 0.0
    seed: int | None = None
    input_description: dict | None = None

    @property
    def k(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def z(self, k: int) -> np.ndarray:
        return self.states[k - 1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k"] + [f"z_{i + 1}" for i in range(self.n)])
            for k, row in enumerate(self.states, start=1):
                writer.writerow([k] + [repr(float(x)) for x in row])

    def sidecar(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "sigma": self.noise_sigma,
            "seed": self.seed,
            "input": self.input_description,
        }

    def save(self, path) -> None:
        """Write the CSV trajectory and a ``.json`` sidecar next to it."""
        path = Path(path)
        self.to_csv(path)
        path.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2))

    @classmethod
    def load(cls, path, epsilon: float | None = None) -> "ObservationSet":
        path = Path(path)
        states = read_trajectory_csv(path)
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text())
        eps = epsilon if epsilon is not None else meta.get("epsilon")
        if eps is None:
            raise ValueError("sampling period unknown: pass epsilon or provide a sidecar")
        return cls(states, float(eps), float(meta.get("sigma") or 0.0),
                   meta.get("seed"), meta.get("input"))


def read_trajectory_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "k":
        raise ValueError("trajectory CSV must start with a 'k' column")
    data = np.array([[float(x) for x in r] for r in body if r])
    ks = data[:, 0]
    if not np.array_equal(ks, np.arange(1, len(ks) + 1)):
        raise ValueError("trajectory rows must be k = 1..K in order")
    return data[:, 1:]


def simulate(p: InteractionMatrix, z_init, latent: LatentInputModel, k_max: int,
             sigma: float = 0.0, seed=None) -> ObservationSet:
    """Run the discrete consensus recursion and add i.i.d. Gaussian observation noise."""
    if k_max < 2:
        raise ValueError(f"need K >= 2 observations, got {k_max}")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    z = np.asarray(z_init, dtype=float)
    n = p.n
    if z.shape != (n,) or latent.n != n:
        raise ValueError(f"dimension mismatch: P is {n}x{n}, z_init {z.shape}, input n={latent.n}")
    u = latent.matrix(k_max)
    eps = p.epsilon
    truth = np.empty((k_max, n))
    for k in range(1, k_max + 1):
        z = p.p @ z + eps * u[k - 1]
        truth[k - 1] = z
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=truth.shape) if sigma > 0 else 0.0
    states = truth + noise
    states.setflags(write=False)
    recorded = int(seed) if isinstance(seed, (int, np.integer)) else None
    return ObservationSet(states, eps, float(sigma), recorded, latent.describe())


def true_states(p: InteractionMatrix, z_init, latent: LatentInputModel, k_max: int) -> np.ndarray:
    return np.array(simulate(p, z_init, latent, k_max).states)


@dataclass(frozen=True)
class SeparatedState:
    z0_part: np.ndarray
    zu_part: np.ndarray
    m_vector: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.z0_part + self.zu_part


def _real(x, what):
    x = np.asarray(x)
    scale = max(1.0, float(np.abs(x).max(initial=0.0)))
    if np.abs(x.imag).max(initial=0.0) > 1e-8 * scale:
        raise ArithmeticError(f"{what} has a non-negligible imaginary part")
    return x.real


def offset_vector(spec: SpectralData, u) -> np.ndarray:
    """``m = sum_{i>=2} (1/lambda_i) v_i w_i^T u``."""
    u = np.asarray(u, dtype=float)
    lam = spec.eigenvalues[1:]
    coeffs = (spec.left[:, 1:].T @ u) / lam
    return _real(spec.right[:, 1:] @ coeffs, "m")


def damping_term(spec: SpectralData, u, t: float) -> np.ndarray:
    """``sum_{i>=2} exp(-lambda_i t)/lambda_i v_i w_i^T u``, the transient of z_u."""
    u = np.asarray(u, dtype=float)
    lam = spec.eigenvalues[1:]
    coeffs = np.exp(-lam * t) * (spec.left[:, 1:].T @ u) / lam
    return _real(spec.right[:, 1:] @ coeffs, "damping term")


def closed_form_state(spec: SpectralData, z_init, u, t: float) -> SeparatedState:
    """Continuous-time state of ``dz/dt = -L z + u`` split into its two sources."""
    z_init = np.asarray(z_init, dtype=float)
    u = np.asarray(u, dtype=float)
    decay = np.exp(-spec.eigenvalues * t)
    z0 = _real(spec.right @ (decay * (spec.left.T @ z_init)), "z_0")
    drift = _real(spec.right[:, 0] * (spec.left[:, 0] @ u), "drift") * t
    m = offset_vector(spec, u)
    zu = drift + m - damping_term(spec, u, t)
    return SeparatedState(z0, zu, m)


def make_time_varying_input(n: int, injected: dict, family_params: dict | None = None,
                            l: float | None = None, seed=None, *, family=None,
                            interaction: InteractionMatrix | None = None,
                            z_init=None, max_doublings: int = 10,
                            dominance: float | None = None) -> LatentInputModel:
    """Build a time-varying input and enforce identifiability at each injection.

    ``injected`` maps agent index to injection time. Missing coefficients are
    drawn at random. When ``interaction`` and ``z_init`` are given, each
    agent's signal is doubled until ``|dz_j / (eps u_j)| < l`` holds at its
    injection step on the noiseless trajectory. With ``dominance`` set, the
    first input increment ``eps u_j(k_u)`` must also exceed ``dominance``
    times both the input-free increment into step ``k_u + 1`` and the
    increment into step ``k_u``.
    """
    family = family or ExponentialFamily()
    if not injected:
        return zero_input(n)
    rng = np.random.default_rng(seed)
    params = {}
    for j, k_u in injected.items():
        if k_u < 2:
            raise ValueError(f"injection time for agent {j} must be >= 2, got {k_u}")
        if family_params and j in family_params:
            params[j] = np.asarray(family_params[j], dtype=float)
        else:
            params[j] = np.array([rng.uniform(1.0, 3.0), rng.uniform(0.02, 0.2),
                                  rng.uniform(0.5, 2.0)])
    model = LatentInputModel(n, TIME_VARYING, None, dict(injected), params, family, l)
    if interaction is None or z_init is None or l is None:
        return model

    eps = interaction.epsilon
    for _ in range(max_doublings + 1):
        k_max = max(injected.values()) + 2
        z = true_states(interaction, z_init, model, k_max)
        z_full = np.vstack([np.asarray(z_init, dtype=float), z])  # row k holds z(k)
        failing = []
        for j, k_u in injected.items():
            u_val = float(model.signal(j, k_u))
            step = z_full[k_u + 1, j] - z_full[k_u, j]
            ratio = np.inf if u_val == 0 else abs(step / (eps * u_val))
            ok = ratio < l
            if ok and dominance is not None:
                natural = max(abs(step - eps * u_val), abs(z_full[k_u, j] - z_full[k_u - 1, j]))
                ok = abs(eps * u_val) >= dominance * natural
            if not ok:
                failing.append(j)
        if not failing:
            return model
        for j in failing:
            theta = np.array(params[j], dtype=float)
            if family.name == "exp":
                theta[[0, 2]] *= 2.0
            else:
                theta *= 2.0
            params[j] = theta
        model = LatentInputModel(n, TIME_VARYING, None, dict(injected), params, family, l)
    raise InfeasibleInput(f"agents {failing} stay unidentifiable after {max_doublings} doublings")


def input_from_description(desc: dict, n: int) -> LatentInputModel:
    if desc["kind"] == TIME_INVARIANT:
        return constant_input(desc["constant"])
    inj = {int(j): int(k) for j, k in desc["injection_times"].items()}
    params = {int(j): np.asarray(t) for j, t in desc["params"].items()}
    return LatentInputModel(n, TIME_VARYING, None, inj, params, get_family(desc["family"]),
                            desc.get("lipschitz_bound"))
