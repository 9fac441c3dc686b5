"""Command-line entry point: ``topoinfer <command> ...``.

Commands: ``simulate``, ``infer totia``, ``infer ietia``, ``eval`` and
``experiment``. Failures exit nonzero with a message naming the pipeline
stage; a trajectory with no detectable injection exits with
``EXIT_TIME_INVARIANT`` so scripts can fall back to ``infer totia``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dynamics import ObservationSet, constant_input, make_time_varying_input, simulate, zero_input
from .errors import TimeInvariantClassification, TopoInferError
from .graph import WeightedDigraph, default_epsilon, interaction_matrix, random_connected_digraph
from .harness import SCENARIOS, default_config, load_config, run_experiment
from .ietia import OBSERVED, FILTERED, IeTiaConfig, ie_tia
from .metrics import evaluate
from .solver import WEIGHT_KINDS
from .totia import ToTiaConfig, to_tia

EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_TIME_INVARIANT = 3

log = logging.getLogger("topoinfer")


def _write_json(path, payload):
    text = json.dumps(payload, indent=2)
    if path in (None, "-"):
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _read_matrix(path) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        for key in ("p_hat", "p", "matrix"):
            if key in data:
                data = data[key]
                break
        else:
            raise ValueError(f"{path}: expected a matrix or an object with 'p_hat' or 'p'")
    mat = np.asarray(data, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{path}: matrix must be square, got shape {mat.shape}")
    return mat


def _to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


# commands --------------------------------------------------------------------

def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.graph:
        g = WeightedDigraph.load_json(args.graph)
    else:
        g = random_connected_digraph(args.n, args.density, (args.wmin, args.wmax), seed=rng)
    eps = args.epsilon if args.epsilon is not None else default_epsilon(g)
    p = interaction_matrix(g, eps)
    z_init = rng.uniform(0.0, args.scale, g.n)
    if args.input == "zero":
        latent = zero_input(g.n)
    elif args.input == "constant":
        latent = constant_input(rng.normal() + g.laplacian @ rng.normal(size=g.n))
    else:
        agents = [j for j in range(g.n) if rng.random() < 0.5] or [int(rng.integers(g.n))]
        k_first = int(rng.integers(g.n + 2, g.n + 5))
        times = {agents[0]: k_first}
        times.update({j: int(rng.integers(k_first + 1, k_first + 8)) for j in agents[1:]})
        latent = make_time_varying_input(g.n, times, l=args.lipschitz, seed=rng, interaction=p,
                                         z_init=z_init, max_doublings=30,
                                         dominance=2.0 + 1.0 / args.lipschitz)
    obs = simulate(p, z_init, latent, args.k, args.sigma, rng)
    obs.save(args.out)
    truth = Path(args.truth) if args.truth else Path(args.out).with_suffix(".truth.json")
    _write_json(truth, {"seed": args.seed, "p": p.p.tolist(), "epsilon": eps,
                        "adjacency": g.adjacency.tolist(), "z_init": z_init.tolist(),
                        "input": latent.describe()})
    log.info("wrote %d x %d trajectory to %s and ground truth to %s", obs.k, obs.n, args.out, truth)
    return 0


def _load_obs(args) -> ObservationSet:
    return ObservationSet.load(args.input, epsilon=args.epsilon)


def cmd_infer_totia(args) -> int:
    obs = _load_obs(args)
    cfg = ToTiaConfig(rho=args.rho, beta=args.beta, weight_kind=args.weights, eps_tol=args.eps_tol)
    res = to_tia(obs, config=cfg)
    _write_json(args.out, _to_jsonable(res.to_dict()))
    return 0


def cmd_infer_ietia(args) -> int:
    obs = _load_obs(args)
    cfg = IeTiaConfig(lipschitz=args.lipschitz, delta_d=args.delta_d, family=args.family,
                      max_iter=args.max_iter, regressor=args.regressor,
                      p_step=ToTiaConfig(rho=args.rho, beta=args.beta))
    res, trace = ie_tia(obs, config=cfg)
    payload = res.to_dict()
    payload["trace"] = trace.to_dict()
    payload["input_estimates"] = {"family": res.input_estimates["family"],
                                  "theta": res.input_estimates["theta"]}
    _write_json(args.out, _to_jsonable(payload))
    return 0


def cmd_eval(args) -> int:
    p_hat, p_true = _read_matrix(args.phat), _read_matrix(args.ptrue)
    rep = evaluate(p_hat, p_true, args.tau)
    _write_json(args.out, _to_jsonable(rep.to_dict()))
    return 0


def cmd_experiment(args) -> int:
    overrides = dict(seeds=args.seeds, master_seed=args.seed, output_dir=args.out,
                     workers=args.workers, full=args.full or None)
    if args.sigma2:
        overrides["sigma2_grid"] = tuple(float(x) for x in args.sigma2.split(","))
    if args.n:
        overrides["n_grid"] = tuple(int(x) for x in args.n.split(","))
    if args.config:
        cfg = load_config(args.config, **overrides)
    elif args.scenario:
        cfg = default_config(args.scenario, **overrides)
    else:
        raise argparse.ArgumentTypeError("experiment needs --scenario or --config")
    _, summary = run_experiment(cfg)
    print(json.dumps({"output": str(cfg.out_path / cfg.scenario), "cells": summary["cells"]},
                     indent=2, default=str))
    return 0


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="topoinfer",
                                     description="Infer directed interaction topology of consensus "
                                                 "networks driven by latent inputs.")
    sub = parser.add_subparsers(dest="command", metavar="command")

    sim = sub.add_parser("simulate", parents=[common], help="simulate a noisy trajectory to CSV")
    sim.add_argument("--n", type=int, default=5, help="number of agents")
    sim.add_argument("--k", type=int, default=40, help="number of observations K")
    sim.add_argument("--sigma", type=float, default=0.0, help="observation noise std")
    sim.add_argument("--density", type=float, default=0.3)
    sim.add_argument("--wmin", type=float, default=0.5)
    sim.add_argument("--wmax", type=float, default=1.5)
    sim.add_argument("--epsilon", type=float, default=None, help="sampling period (0.5/d_max)")
    sim.add_argument("--scale", type=float, default=10.0, help="initial states drawn from [0, scale)")
    sim.add_argument("--input", choices=("zero", "constant", "time-varying"), default="constant")
    sim.add_argument("--lipschitz", type=float, default=2.0, help="identifiability bound l")
    sim.add_argument("--graph", help="use this graph JSON instead of a random one")
    sim.add_argument("--truth", help="ground-truth JSON path (default <out>.truth.json)")
    sim.add_argument("--out", required=True, help="trajectory CSV path")
    sim.set_defaults(func=cmd_simulate)

    infer = sub.add_parser("infer", help="estimate P from a trajectory")
    infer.set_defaults(usage_parser=infer)
    isub = infer.add_subparsers(dest="algorithm", metavar="algorithm")
    for name, helptext in (("totia", "time-invariant input"), ("ietia", "time-varying input")):
        ip = isub.add_parser(name, parents=[common], help=helptext)
        ip.add_argument("--input", required=True, help="trajectory CSV")
        ip.add_argument("--epsilon", type=float, default=None,
                        help="sampling period (default: from the sidecar JSON)")
        ip.add_argument("--rho", type=float, default=None, help="L1 weight (default scales with data)")
        ip.add_argument("--beta", type=float, default=0.5)
        ip.add_argument("--out", default="-", help="result JSON path ('-' for stdout)")
        if name == "totia":
            ip.add_argument("--weights", choices=WEIGHT_KINDS, default="ws1")
            ip.add_argument("--eps-tol", type=float, default=None)
            ip.set_defaults(func=cmd_infer_totia)
        else:
            ip.add_argument("--lipschitz", type=float, default=None,
                            help="identifiability bound l (default: estimated)")
            ip.add_argument("--delta-d", type=float, default=0.015)
            ip.add_argument("--family", default="exp", help="exp, poly0, poly1 or poly2")
            ip.add_argument("--max-iter", type=int, default=50)
            ip.add_argument("--regressor", choices=(OBSERVED, FILTERED), default=OBSERVED)
            ip.set_defaults(func=cmd_infer_ietia)

    ev = sub.add_parser("eval", parents=[common], help="structure and magnitude error of an estimate")
    ev.add_argument("--phat", required=True)
    ev.add_argument("--ptrue", required=True)
    ev.add_argument("--tau", type=float, default=None, help="support threshold (default 5%% of mean edge)")
    ev.add_argument("--out", default="-")
    ev.set_defaults(func=cmd_eval)

    ex = sub.add_parser("experiment", parents=[common], help="run a Monte Carlo study")
    ex.add_argument("--scenario", choices=SCENARIOS)
    ex.add_argument("--config", help="INI file with an [experiment] section")
    ex.add_argument("--seeds", type=int, default=None, help="trials per cell")
    ex.add_argument("--sigma2", help="comma-separated noise variances")
    ex.add_argument("--n", help="comma-separated network sizes")
    ex.add_argument("--workers", type=int, default=None)
    ex.add_argument("--full", action="store_true", help="include the large network sizes")
    ex.add_argument("--out", default=None, help="output directory (default $TOPOINFER_OUTPUT_DIR "
                                                "or ./results)")
    ex.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        getattr(args, "usage_parser", parser).print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TimeInvariantClassification as exc:
        print(f"error [{exc.stage}]: {exc}\nhint: run `topoinfer infer totia`", file=sys.stderr)
        return EXIT_TIME_INVARIANT
    except TopoInferError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except argparse.ArgumentTypeError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error [input]: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
