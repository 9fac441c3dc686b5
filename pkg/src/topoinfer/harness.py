"""Monte Carlo studies of the two inference algorithms at desk scale.

Each study is a grid of cells (a noise level or a network size) times a
number of trials. Trial randomness comes from
``SeedSequence([master_seed, cell_id, trial])``, so results do not depend on
how many workers run them or in which order. Failures are kept as rows with
a ``status`` column rather than aborting the sweep.
"""
from __future__ import annotations

import configparser
import json
import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import (ObservationSet, constant_input, make_time_varying_input, simulate,
                       true_states, zero_input)
from .errors import ConfigError, MaxIterations, RankWarning, TopoInferError
from .families import get_family
from .graph import (InteractionMatrix, complete_digraph, default_epsilon, interaction_matrix,
                    random_connected_digraph)
from .ietia import IeTiaConfig, ie_tia
from .metrics import evaluate, input_param_error, magnitude_error, write_rows
from .totia import ToTiaConfig, baseline_a1, baseline_a2, baseline_a3, to_tia

log = logging.getLogger(__name__)

OUTPUT_ENV = "TOPOINFER_OUTPUT_DIR"
SCENARIOS = ("totia_noise_sweep", "totia_size_sweep", "ietia_iteration_study",
             "ietia_size_table", "corollary_ranking")
NOISE_GRID = tuple(round(0.1 * i, 1) for i in range(1, 11))
# published (iterations, magnitude error) of the time-varying method per network size
REFERENCE_SIZE_TABLE = {10: (5, 0.189), 20: (6, 0.236), 30: (5, 0.360), 40: (6, 0.341),
                        50: (7, 0.525), 60: (5, 0.533)}

TOTIA_ALGOS = {"totia": to_tia, "a1": baseline_a1, "a2": baseline_a2, "a3": baseline_a3}


# scenario generators ---------------------------------------------------------

@dataclass(frozen=True)
class TotiaScenario:
    interaction: InteractionMatrix
    obs: ObservationSet
    u: np.ndarray


def totia_scenario(n: int, sigma2: float, rng, k_total: int = 40, scale: float = 1000.0,
                   density: float = 0.3) -> TotiaScenario:
    """Random digraph, initial states in ``[0, scale)`` and ``u = c0 1 + L r0``."""
    rng = np.random.default_rng(rng)
    g = random_connected_digraph(n, density, seed=rng)
    p = interaction_matrix(g, default_epsilon(g))
    u = rng.normal() + g.laplacian @ rng.normal(size=n)
    obs = simulate(p, rng.uniform(0, scale, n), constant_input(u), k_total, np.sqrt(sigma2), rng)
    return TotiaScenario(p, obs, u)


@dataclass(frozen=True)
class IetiaScenario:
    interaction: InteractionMatrix
    obs: ObservationSet
    latent: object
    injection_times: dict
    premise_met: bool

    @property
    def u_true(self) -> np.ndarray:
        return self.latent.matrix(self.obs.k)[1:]  # row k-1 holds u(k)

    def z_phi(self) -> np.ndarray:
        """Noiseless input-free series ``z(k) - eps u(k - 1)``."""
        z = true_states(self.interaction, self.z_init, self.latent, self.obs.k)
        return z - self.obs.epsilon * self.latent.matrix(self.obs.k)[:-1]

    @property
    def z_init(self) -> np.ndarray:
        return np.asarray(self.obs.input_description.get("z_init"))


def _monotone_prefix(p, z_init, k_uq):
    # every agent's input-free increment shrinks in magnitude up to the onset
    z = np.vstack([z_init, true_states(p, z_init, zero_input(len(z_init)), k_uq + 1)])
    d = np.abs(np.diff(z, axis=0))[1:]
    return bool(np.all(d[1:] <= d[:-1]))


def ietia_scenario(n: int, sigma: float, rng, scale: float = 1000.0, density: float = 0.6,
                   l: float = 2.0, inject_prob: float = 0.5, k_total: int | None = None,
                   premise_tries: int = 200, graph=None, injected: dict | None = None,
                   z_init=None, family_params: dict | None = None) -> IetiaScenario:
    """Exponential-family inputs injected after an input-free prefix of at least N + 1 steps.

    Graphs are redrawn (up to ``premise_tries`` times) until every agent's
    input-free increments are non-increasing up to the first onset, which is
    the regime where a jump in the increment ratio marks an injection. The
    first injected agent is alone at its onset; the rest follow within seven
    steps. Inputs are scaled until they dominate the natural increments.
    """
    rng = np.random.default_rng(rng)
    premise = False
    for _ in range(max(premise_tries, 1)):
        g = graph if graph is not None else random_connected_digraph(n, density, seed=rng)
        p = interaction_matrix(g, default_epsilon(g))
        z0 = rng.uniform(0, scale, n) if z_init is None else np.asarray(z_init, dtype=float)
        k_uq = int(rng.integers(n + 2, n + 5)) if injected is None else min(injected.values())
        premise = _monotone_prefix(p, z0, k_uq)
        if premise or graph is not None:
            break
    if injected is None:
        agents = [j for j in range(n) if rng.random() < inject_prob] or [int(rng.integers(n))]
        injected = {agents[0]: k_uq}
        for j in agents[1:]:
            injected[j] = int(rng.integers(k_uq + 1, k_uq + 8))
    latent = make_time_varying_input(n, injected, family_params, l=l, seed=rng, interaction=p,
                                     z_init=z0, max_doublings=30, dominance=2.0 + 1.0 / l)
    k_total = k_total or 3 * n + 10
    obs = simulate(p, z0, latent, k_total, sigma, rng)
    desc = dict(obs.input_description, z_init=z0.tolist())
    obs = replace(obs, input_description=desc)
    return IetiaScenario(p, obs, latent, dict(injected), premise)


def corollary_graphs(n: int = 8, seed: int = 20240601):
    """A fixed asymmetric digraph and the equal-weight complete digraph on ``n`` nodes."""
    asym = random_connected_digraph(n, 0.35, weight_range=(0.2, 2.0), seed=seed)
    return {"asymmetric": asym, "complete": complete_digraph(n)}


def corollary_scenario(graph, agent: int, sigma: float, rng, scale: float = 1000.0,
                       theta=(400.0, 0.1, 200.0)) -> IetiaScenario:
    """Inject the same signal into ``agent`` only.

    The initial state and the noise are shared across agents up to the swap
    of entries 0 and ``agent``, so on a graph whose automorphisms include that
    swap the runs are relabelings of each other.
    """
    n = graph.n
    rng = np.random.default_rng(rng)
    base = rng.uniform(0, scale, n)
    swap = np.arange(n)
    swap[[0, agent]] = swap[[agent, 0]]
    k_total = 3 * n + 10
    noise = rng.normal(0.0, sigma, (k_total, n))[:, swap] if sigma > 0 else 0.0
    p = interaction_matrix(graph, default_epsilon(graph))
    k_u = n + 2
    latent = make_time_varying_input(n, {agent: k_u}, {agent: np.asarray(theta)})
    z0 = base[swap]
    obs = simulate(p, z0, latent, k_total)
    states = obs.states + noise
    states.setflags(write=False)
    obs = replace(obs, states=states, noise_sigma=float(sigma),
                  input_description=dict(obs.input_description, z_init=z0.tolist()))
    return IetiaScenario(p, obs, latent, {agent: k_u}, _monotone_prefix(p, z0, k_u))


# per-trial runners -----------------------------------------------------------

def run_totia_trial(n: int, sigma2: float, rng, config: ToTiaConfig | None = None,
                    **scenario_kw) -> dict:
    sc = totia_scenario(n, sigma2, rng, **scenario_kw)
    row = {"n": n, "sigma2": sigma2}
    for name, algo in TOTIA_ALGOS.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            res = algo(sc.obs, config=config)
        rep = evaluate(res.p_hat, sc.interaction.p)
        row[f"psi_s_{name}"] = rep.psi_s
        row[f"psi_m_{name}"] = rep.psi_m
        row["tau"] = rep.sign_threshold
    return row


def _ietia_run(sc: IetiaScenario, config: IeTiaConfig, l: float, known: bool = False):
    try:
        result, trace = ie_tia(sc.obs, l=l, config=config,
                               injected=sc.injection_times if known else None)
        status = "ok"
    except MaxIterations as exc:
        result, trace = exc.result
        status = "diverged" if trace.diverged else "max_iter"
    return result, trace, status


def iteration_errors(sc: IetiaScenario, trace, family) -> tuple[list, list]:
    """Per-iteration magnitude error of P_hat and input-parameter error."""
    u_true = sc.u_true
    psi_m = [magnitude_error(r.p_hat, sc.interaction.p) for r in trace.records]
    psi_t = [input_param_error(u_true, r.theta_hats, family, sc.obs.k, sc.obs.n,
                               sc.injection_times) for r in trace.records]
    return psi_m, psi_t


def run_ietia_trial(n: int, sigma: float, rng, config: IeTiaConfig | None = None,
                    l: float = 2.0, **scenario_kw) -> dict:
    config = config or IeTiaConfig()
    sc = ietia_scenario(n, sigma, rng, l=l, **scenario_kw)
    row = {"n": n, "sigma": sigma, "premise_met": sc.premise_met,
           "injected": json.dumps(sc.injection_times)}
    result, trace, status = _ietia_run(sc, config, l)
    family = get_family(config.family)
    psi_m, psi_t = iteration_errors(sc, trace, family)
    row.update({
        "run_status": status,
        "identified": json.dumps(result.diagnostics["injected"]),
        "identification_exact": result.diagnostics["injected"] == sc.injection_times,
        "i_t": trace.i_t,
        "psi_m0": magnitude_error(result.intermediate["p_hat0"], sc.interaction.p),
        "psi_m": psi_m[-1],
        "psi_theta": psi_t[-1],
        "psi_m_trace": json.dumps(psi_m),
        "psi_theta_trace": json.dumps(psi_t),
        "psi_d_trace": json.dumps(trace.psi_d),
    })
    return row


def run_corollary_trial(graph_name: str, agent: int, sigma: float, seed,
                        config: IeTiaConfig | None = None, l: float = 2.0) -> dict:
    config = config or IeTiaConfig()
    graph = corollary_graphs()[graph_name]
    sc = corollary_scenario(graph, agent, sigma, seed)
    # the stimulated agent is known by design; only the estimation stage is compared
    result, trace, status = _ietia_run(sc, config, l, known=True)
    return {"graph": graph_name, "agent": agent, "sigma": sigma, "run_status": status,
            "i_t": trace.i_t, "psi_m": magnitude_error(result.p_hat, sc.interaction.p)}


# configuration -----------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scenario: str
    sigma2_grid: tuple = NOISE_GRID
    n_grid: tuple = (10,)
    seeds: int = 20
    master_seed: int = 0
    output_dir: str | None = None
    workers: int = 1
    rho: float | None = None
    beta: float = 0.5
    delta_d: float = 0.015
    lipschitz: float = 2.0
    full: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.sigma2_grid or not self.n_grid:
            raise ConfigError("noise and size grids must be non-empty")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if any(s < 0 for s in self.sigma2_grid) or any(n < 2 for n in self.n_grid):
            raise ConfigError("noise variances must be >= 0 and sizes >= 2")
        return self

    @property
    def out_path(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV, "results"))


def default_config(scenario: str, full: bool | None = None, **overrides) -> ExperimentConfig:
    """Desk-scale protocol for each study; ``full`` adds the larger sizes."""
    full = bool(full)
    base = {
        "totia_noise_sweep": dict(n_grid=(10,), sigma2_grid=NOISE_GRID),
        "totia_size_sweep": dict(n_grid=(5, 10, 15, 20, 25, 30, 35, 40) if full
                                 else (5, 10, 15, 20, 25, 30), sigma2_grid=(0.3,)),
        "ietia_iteration_study": dict(n_grid=(10,), sigma2_grid=(0.0, 0.05)),
        "ietia_size_table": dict(n_grid=(10, 20, 30, 40, 50, 60) if full else (10, 20, 30),
                                 sigma2_grid=(0.05,), seeds=10),
        "corollary_ranking": dict(n_grid=(8,), sigma2_grid=(0.05,), seeds=1),
    }
    if scenario not in base:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    kw = dict(base[scenario], full=full)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(scenario, **kw).validate()


def _floats(text):
    return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an ``[experiment]`` INI section; list values are comma separated.

    Non-None keyword overrides (e.g. from the command line) win over the file.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise ConfigError(f"cannot read config file {path}")
    if "experiment" not in parser:
        raise ConfigError("config needs an [experiment] section")
    sec = parser["experiment"]
    if "scenario" not in sec:
        raise ConfigError("config needs a scenario")
    kw = {}
    try:
        if "sigma2" in sec:
            kw["sigma2_grid"] = _floats(sec["sigma2"])
        if "n" in sec:
            kw["n_grid"] = tuple(int(x) for x in _floats(sec["n"]))
        for key, cast in (("seeds", int), ("master_seed", int), ("workers", int),
                          ("rho", float), ("beta", float), ("delta_d", float),
                          ("lipschitz", float)):
            if key in sec:
                kw[key] = cast(sec[key])
        if "solver" in parser and "rho" in parser["solver"]:
            kw.setdefault("rho", float(parser["solver"]["rho"]))
        full = sec.getboolean("full", False)
    except ValueError as exc:
        raise ConfigError(f"bad value in {path}: {exc}") from exc
    if "output_dir" in sec:
        kw["output_dir"] = sec["output_dir"]
    kw.update({k: v for k, v in overrides.items() if v is not None})
    full = kw.pop("full", full)
    return default_config(sec["scenario"], full, **kw)


# execution ---------------------------------------------------------------------

def trial_rng(master_seed: int, cell: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, cell, trial]))


def _cells(config: ExperimentConfig):
    if config.scenario == "corollary_ranking":
        names = list(corollary_graphs())
        return [(i, {"graph": name, "sigma2": config.sigma2_grid[0]}) for i, name in enumerate(names)]
    cells = [(n, s2) for n in config.n_grid for s2 in config.sigma2_grid]
    return [(i, {"n": n, "sigma2": s2}) for i, (n, s2) in enumerate(cells)]


def _run_one(config: ExperimentConfig, cell_id: int, cell: dict, trial: int) -> dict:
    rng = trial_rng(config.master_seed, cell_id, trial)
    row = {"scenario": config.scenario, "cell": cell_id, "trial": trial}
    sigma2 = cell["sigma2"]
    try:
        if config.scenario.startswith("totia"):
            tcfg = ToTiaConfig(rho=config.rho, beta=config.beta)
            row.update(run_totia_trial(cell["n"], sigma2, rng, tcfg))
        elif config.scenario.startswith("ietia"):
            icfg = IeTiaConfig(delta_d=config.delta_d, lipschitz=config.lipschitz,
                               p_step=ToTiaConfig(rho=config.rho, beta=config.beta))
            row.update(run_ietia_trial(cell["n"], float(np.sqrt(sigma2)), rng, icfg,
                                       l=config.lipschitz))
        else:
            icfg = IeTiaConfig(delta_d=config.delta_d, lipschitz=config.lipschitz,
                               p_step=ToTiaConfig(rho=config.rho, beta=config.beta))
            seed = int(np.random.SeedSequence([config.master_seed, cell_id]).generate_state(1)[0])
            row.update(run_corollary_trial(cell["graph"], trial, float(np.sqrt(sigma2)), seed, icfg,
                                           config.lipschitz))
        row["status"] = "ok"
    except TopoInferError as exc:
        row.update(cell)
        row["status"] = f"{type(exc).__name__}[{exc.stage}]: {exc}"
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        row.update(cell)
        row["status"] = f"{type(exc).__name__}: {exc}"
    return row


def _tasks(config):
    for cell_id, cell in _cells(config):
        trials = config.seeds
        if config.scenario == "corollary_ranking":
            trials = corollary_graphs()[cell["graph"]].n  # one run per stimulated agent
        for trial in range(trials):
            yield cell_id, cell, trial


def _mean(rows, key):
    vals = [r[key] for r in rows if r.get("status") == "ok" and key in r
            and r[key] is not None and np.isfinite(r[key])]
    return float(np.mean(vals)) if vals else None


def summarize(config: ExperimentConfig, rows: list[dict]) -> dict:
    cells = []
    for cell_id, cell in _cells(config):
        sub = [r for r in rows if r["cell"] == cell_id]
        ok = [r for r in sub if r.get("status") == "ok"]
        entry = dict(cell, cell=cell_id, trials=len(sub), ok=len(ok))
        metric_keys = sorted({k for r in ok for k, v in r.items()
                              if k.startswith(("psi_", "i_t")) and isinstance(v, (int, float))
                              and not isinstance(v, bool)})
        for key in metric_keys:
            entry[f"mean_{key}"] = _mean(sub, key)
        if config.scenario == "corollary_ranking" and ok:
            psi = np.array([r["psi_m"] for r in ok])
            entry["spread_ratio"] = float(psi.max() / psi.min()) if psi.min() > 0 else None
            entry["relative_range"] = float((psi.max() - psi.min()) / psi.mean())
            entry["ranking"] = [int(r["agent"]) for r in sorted(ok, key=lambda r: -r["psi_m"])]
        if config.scenario == "ietia_size_table" and cell["n"] in REFERENCE_SIZE_TABLE:
            entry["reference_i_t"], entry["reference_psi_m"] = REFERENCE_SIZE_TABLE[cell["n"]]
        cells.append(entry)
    return {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items()},
            "cells": cells}


def run_experiment(config: ExperimentConfig, write: bool = True):
    """Run every (cell, trial) and return ``(rows, summary)``.

    With ``write`` set, ``results.csv`` and ``summary.json`` go to the
    configured output directory (or ``$TOPOINFER_OUTPUT_DIR``).
    """
    config.validate()
    tasks = list(_tasks(config))
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            futures = [pool.submit(_run_one, config, *t) for t in tasks]
            rows = [f.result() for f in futures]
    else:
        rows = [_run_one(config, *t) for t in tasks]
    summary = summarize(config, rows)
    if write:
        out = config.out_path / config.scenario
        out.mkdir(parents=True, exist_ok=True)
        write_rows(out / "results.csv", rows)
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
        log.info("wrote %d rows to %s", len(rows), out)
    return rows, summary
