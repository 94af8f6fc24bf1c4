"""Command-line entry point.

Subcommands: ``simulate``, ``sweep``, ``fragility``, ``fi-search``,
``distributed``, ``demo``.  Each takes ``--config`` (flat key=value file) and
``--out``; ``--seed`` overrides the configured seed.  Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import environments as envs
from .distributed import build_mixing_matrix, gossip_tdmd_run
from .geometry import SimplexPoint
from .harness import (
    ConfigError,
    ExperimentConfig,
    demo_two_expert,
    load_experiment,
    parse_config,
    run_experiment,
    run_on_trace,
    serialize_config,
    sweep,
)
from .learners import LearnerConfig, default_eta
from .metrics import (
    FiniteDistribution,
    export_bandwidth_sweep,
    export_fragility_sweep,
    fragility_index,
)
from .seeding import split_seed


def _load_tree(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config: file not found: {path}")
    return parse_config(p.read_text())


def _override_seed(tree: dict, seed: int | None) -> dict:
    if seed is not None:
        tree["seed"] = seed
    return tree


def _cmd_simulate(args) -> int:
    tree = _override_seed(_load_tree(args.config), args.seed)
    config = load_experiment(tree)
    run_experiment(config, args.out)
    return 0


def _cmd_demo(args) -> int:
    config = demo_two_expert(seed=args.seed if args.seed is not None else 0)
    out = Path(args.out)
    run_experiment(config, out)
    return 0


def _cmd_sweep(args) -> int:
    tree = _override_seed(_load_tree(args.config), args.seed)
    config = load_experiment(tree)
    grid = [float(v) for v in args.grid.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sweep(config, args.parameter, grid, out / "sweep.csv")
    return 0


def _finite_distribution(tree: dict) -> tuple[FiniteDistribution, object]:
    section = tree.get("fragility")
    if not isinstance(section, dict):
        raise ConfigError("fragility: missing section")
    if "probs" not in section:
        raise ConfigError("fragility.probs: missing")
    probs = np.atleast_1d(np.asarray(section["probs"], dtype=float))
    rows = []
    i = 0
    while f"loss_row_{i}" in section:
        rows.append(np.atleast_1d(np.asarray(section[f"loss_row_{i}"], dtype=float)))
        i += 1
    if len(rows) != probs.size:
        raise ConfigError("fragility.loss_row_*: need one row per outcome")
    dist = FiniteDistribution(SimplexPoint(probs), np.stack(rows))
    decision = section.get("decision", 0)
    if isinstance(decision, list):
        decision = SimplexPoint(np.asarray(decision, dtype=float))
    else:
        decision = int(decision)
    return dist, decision


def _cmd_fragility(args) -> int:
    tree = _override_seed(_load_tree(args.config), args.seed)
    dist, decision = _finite_distribution(tree)
    section = tree["fragility"]
    epsilons = section.get("epsilons", [0.01, 0.02, 0.05, 0.1, 0.2, 0.5])
    deltas = section.get("deltas", [0.05, 0.1, 0.2, 0.4])
    if isinstance(epsilons, (int, float)):
        epsilons = [epsilons]
    if isinstance(deltas, (int, float)):
        deltas = [deltas]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_fragility_sweep(dist, decision, epsilons, out / "fragility.csv")
    export_bandwidth_sweep(dist, decision, deltas, out / "bandwidth.csv", tol=float(section.get("tol", 1e-6)))
    return 0


def _cmd_fi_search(args) -> int:
    tree = _override_seed(_load_tree(args.config), args.seed)
    section = tree.get("fi", {})
    horizon = int(section.get("horizon", 4096))
    alpha = float(section.get("alpha", 3.0))
    tol = float(section.get("tol", 0.01))
    stress_window = int(section.get("stress_window", 3))
    seed = int(tree.get("seed", 0))

    raw_learners = tree.get("learners")
    if not isinstance(raw_learners, dict) or not raw_learners:
        raise ConfigError("learners: at least one learner is required")
    family = envs.switch_intensity_family(horizon, stress_window=stress_window)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    rows = []
    for label, raw in raw_learners.items():
        kwargs = dict(raw)
        kwargs.setdefault("eta", default_eta(2, horizon))
        if "tilt" in kwargs:
            kwargs["tilt_mode"] = kwargs.pop("tilt")
        try:
            learner = LearnerConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"learners.{label}: {exc}") from exc
        result = fragility_index(
            lambda trace, cfg=learner, lbl=label: run_on_trace(trace, cfg, lbl, seed),
            alpha,
            horizon,
            family,
            search_tol=tol,
            seed=seed,
        )
        results[label] = {
            "drift_tolerance": result.value,
            "intensity": result.intensity,
            "threshold": result.threshold,
            "diagnostic": result.diagnostic,
        }
        for intensity, path, regret in result.probes:
            rows.append((label, intensity, path, regret))

    (out / "fi_search.json").write_text(json.dumps(results, indent=2) + "\n")
    with open(out / "fi_probes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "intensity", "kl_path_length", "mean_regret"])
        for label, intensity, path, regret in rows:
            writer.writerow([label, format(intensity, ".17g"), format(path, ".17g"), format(regret, ".17g")])
    return 0


def _cmd_distributed(args) -> int:
    tree = _override_seed(_load_tree(args.config), args.seed)
    section = tree.get("distributed", {})
    topology = str(section.get("topology", "ring"))
    n = int(section.get("agents", 8))
    degree = section.get("degree")
    seed = int(tree.get("seed", 0))

    config = load_experiment(tree)
    if len(config.learners) != 1:
        raise ConfigError("learners: distributed runs take exactly one learner")
    _, learner = config.learners[0]

    W = build_mixing_matrix(topology, n, int(degree) if degree is not None else None, seed)
    shards = []
    for i in range(n):
        spec = config.environment
        shard_spec = envs.EnvironmentSpec(
            spec.kind, spec.horizon, spec.params, split_seed(seed, "shard", i)
        )
        shards.append(envs.generate(shard_spec))
    result = gossip_tdmd_run(shards, W, learner)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "consensus.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "consensus_error", "mean_regret"])
        for t in range(result.consensus.size):
            writer.writerow(
                [
                    str(t + 1),
                    format(result.consensus[t], ".17g"),
                    format(result.mean_regret_per_round[t], ".17g"),
                ]
            )
    summary = {
        "topology": W.topology_name,
        "spectral_gap": W.spectral_gap,
        "mean_cumulative_regret": result.mean_cumulative_regret,
        "total_cumulative_regret": result.total_cumulative_regret,
    }
    (out / "distributed.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trustdecay", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, needs_config=True):
        cmd = sub.add_parser(name)
        if needs_config:
            cmd.add_argument("--config", required=True, help="flat key=value config file")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
        cmd.set_defaults(func=func)
        return cmd

    add("simulate", _cmd_simulate)
    swp = add("sweep", _cmd_sweep)
    swp.add_argument("--parameter", required=True, choices=["lambda", "eta", "T", "intensity"])
    swp.add_argument("--grid", required=True, help="comma-separated grid values")
    add("fragility", _cmd_fragility)
    add("fi-search", _cmd_fi_search)
    add("distributed", _cmd_distributed)
    add("demo", _cmd_demo, needs_config=False)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
