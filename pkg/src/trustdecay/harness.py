"""Experiment orchestration: configs, the run loop, canned experiments, IO.

Configuration files are flat ``dotted.key=value`` lines (``#`` comments
allowed).  Values parse as int, float, bool, comma-separated float lists, or
strings, and round-trip exactly through ``serialize_config``.  All
randomness derives from the experiment seed through ``seeding.split_seed``.

Output layout for ``run_experiment``: ``trace.csv`` plus, per learner,
``run_<label>.csv`` (columns ``t,instant_regret,cumulative_regret,lambda_t,
epsilon_hat``) and ``report_<label>.json``.
"""
from __future__ import annotations

import csv
import json
import math
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import environments as envs
from .drift import lambda_schedule, plugin_drift_estimate
from .learners import (
    LearnerConfig,
    bandit_tdmd_step,
    default_eta,
    fixed_share_step,
    hedge_master_step,
    init_state,
    make_lambda_grid,
    master_prediction,
    MasterState,
    sample_arm,
    tdmd_step,
    tdons_step,
)
from .metrics import RegretReport, RunRecord, dynamic_regret
from .geometry import SimplexPoint
from .seeding import generator, split_seed

THREADS_ENV_VAR = "TRUST_DECAY_THREADS"


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the field path."""


# ---------------------------------------------------------------------------
# Flat config format


def _parse_value(raw: str):
    text = raw.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if "," in text:
        try:
            return [float(part) for part in text.split(",")]
        except ValueError:
            return text
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def parse_config(text: str) -> dict:
    """Parse flat dotted-path lines into a nested dict."""
    tree: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        node = tree
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key.strip()}: path collides with a scalar value")
        node[parts[-1]] = _parse_value(raw)
    return tree


def serialize_config(tree: dict) -> str:
    """Inverse of ``parse_config``; emits sorted dotted-path lines."""
    lines = []

    def walk(node: dict, prefix: str):
        for key in sorted(node):
            value = node[key]
            path = f"{prefix}.{key}" if prefix else key
            if isinstance(value, dict):
                walk(value, path)
            else:
                lines.append(f"{path}={_format_value(value)}")

    walk(tree, "")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    environment: envs.EnvironmentSpec
    learners: tuple[tuple[str, LearnerConfig], ...]
    seed: int = 0
    outlier_ks: tuple[int, ...] = ()
    tail_window: int | None = None
    calibration: bool = False
    sweep_seeds: int = 10

    def __post_init__(self):
        labels = [label for label, _ in self.learners]
        if len(labels) != len(set(labels)):
            raise ConfigError("learners: labels must be unique")
        if not labels:
            raise ConfigError("learners: at least one learner is required")


_LEARNER_FIELDS = {
    "eta": float,
    "algorithm": str,
    "tilt": str,
    "kappa": float,
    "lam": float,
    "stress_window": int,
    "plugin_window": int,
    "exploration": float,
    "ons_alpha": float,
    "share_alpha": float,
}


def _learner_from_dict(label: str, raw: dict, d: int, horizon: int) -> LearnerConfig:
    unknown = set(raw) - set(_LEARNER_FIELDS)
    if unknown:
        raise ConfigError(f"learners.{label}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for key, caster in _LEARNER_FIELDS.items():
        if key in raw:
            kwargs["tilt_mode" if key == "tilt" else key] = caster(raw[key])
    kwargs.setdefault("eta", default_eta(d, horizon))
    try:
        return LearnerConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"learners.{label}: {exc}") from exc


def _env_from_dict(raw: dict, seed: int) -> envs.EnvironmentSpec:
    if "kind" not in raw:
        raise ConfigError("env.kind: missing")
    kind = str(raw["kind"])
    if "horizon" not in raw:
        raise ConfigError("env.horizon: missing")
    horizon = int(raw["horizon"])
    params = {k: v for k, v in raw.items() if k not in ("kind", "horizon", "seed")}
    env_seed = int(raw.get("seed", split_seed(seed, "env", 0)))
    try:
        return envs.EnvironmentSpec(kind, horizon, params, env_seed)
    except ValueError as exc:
        raise ConfigError(f"env: {exc}") from exc


def load_experiment(tree: dict) -> ExperimentConfig:
    """Build a validated ExperimentConfig from a parsed config tree."""
    seed = int(tree.get("seed", 0))
    if "env" not in tree or not isinstance(tree["env"], dict):
        raise ConfigError("env: missing section")
    spec = _env_from_dict(tree["env"], seed)
    trace_dim = 2  # all bundled environments emit two decision coordinates by
    # default; environments with an explicit loss map may override below
    if spec.kind in ("gaussian_drift", "volatility_regime") and "loss_offset" in spec.params:
        trace_dim = len(np.atleast_1d(spec.params["loss_offset"]))
    elif spec.kind == "stationary":
        key = "target" if spec.params.get("loss_kind") == "quadratic" else "mean"
        if key in spec.params:
            trace_dim = len(np.atleast_1d(spec.params[key]))

    raw_learners = tree.get("learners")
    if not isinstance(raw_learners, dict) or not raw_learners:
        raise ConfigError("learners: at least one learner is required")
    learners = tuple(
        (label, _learner_from_dict(label, raw, trace_dim, spec.horizon))
        for label, raw in raw_learners.items()
    )

    metrics_tree = tree.get("metrics", {})
    raw_ks = metrics_tree.get("outlier_ks", ())
    if isinstance(raw_ks, (int, float)):
        raw_ks = (raw_ks,)
    outlier_ks = tuple(int(k) for k in raw_ks)
    tail_window = metrics_tree.get("tail_window")
    return ExperimentConfig(
        environment=spec,
        learners=learners,
        seed=seed,
        outlier_ks=outlier_ks,
        tail_window=int(tail_window) if tail_window is not None else None,
        calibration=bool(metrics_tree.get("calibration", False)),
        sweep_seeds=int(tree.get("sweep", {}).get("seeds", 10)),
    )


def load_experiment_file(path) -> ExperimentConfig:
    return load_experiment(parse_config(Path(path).read_text()))


# ---------------------------------------------------------------------------
# The run loop


def run_on_trace(trace: envs.Trace, config: LearnerConfig, label: str, seed: int = 0) -> RunRecord:
    """Drive one learner over a trace and record per-round telemetry.

    The learner sees realized loss vectors (or gradients for quadratic
    objectives) and the trace's stress signal; regret is measured on expected
    losses against the oracle comparator.  Bandit learners sample an arm from
    the exploration-mixed point and are charged the mixture's expected loss.
    """
    T, d = trace.horizon, trace.dim
    state = init_state(d, config)
    rng = generator(split_seed(seed, f"bandit:{label}", 0)) if config.algorithm == "bandit" else None

    observations: deque = deque(maxlen=2 * config.plugin_window)
    hold_left = 0
    hold_lam = 0.0

    decisions = np.zeros((T, d))
    incurred = np.zeros(T)
    instant = np.zeros(T)
    lambdas = np.zeros(T)
    eps_hats = np.zeros(T)

    for t in range(T):
        x = state.point.weights
        eps_true = float(trace.epsilons[t])
        sigma = trace.stresses[t]

        if config.tilt_mode == "zero":
            lam, eps_hat = 0.0, 0.0
        elif config.tilt_mode == "constant":
            lam, eps_hat = config.lam, 0.0
        elif config.tilt_mode == "fixed_kappa":
            if trace.switch_flags[t] and config.stress_window > 0:
                hold_left = config.stress_window
                hold_lam = lambda_schedule(eps_true, config.kappa)
            lam = lambda_schedule(eps_true, config.kappa)
            if hold_left > 0:
                lam = max(lam, hold_lam)
                hold_left -= 1
            eps_hat = eps_true
        else:  # plugin
            w = config.plugin_window
            if len(observations) >= 2 * w:
                window = list(observations)
                eps_hat = plugin_drift_estimate(window[:w], window[w:])
            else:
                eps_hat = 0.0
            lam = lambda_schedule(eps_hat, config.kappa)

        if config.algorithm == "bandit":
            mixture = (1.0 - config.exploration) * x + config.exploration / d
            arm = sample_arm(state.point, config.exploration, rng)
            observed = float(trace.losses[t][arm])
            played = mixture
            incurred[t] = observed
            state = bandit_tdmd_step(
                state, arm, observed, config.eta, lam, sigma, config.exploration
            )
        else:
            played = x
            incurred[t] = float(x @ trace.losses[t])
            g = trace.gradient(t, x)
            if config.algorithm == "fixed_share":
                state = fixed_share_step(state, g, config.eta, config.share_alpha)
            elif config.algorithm == "ons":
                state = tdons_step(state, g, sigma, config.eta, lam)
            else:
                state = tdmd_step(state, g, sigma, config.eta, lam)

        decisions[t] = played
        instant[t] = trace.expected_value(t, played) - trace.comparator_value(t)
        lambdas[t] = lam
        eps_hats[t] = eps_hat
        observations.append(trace.losses[t])
        state = replace(state, cumulative_loss=state.cumulative_loss + incurred[t])

    return RunRecord(label, decisions, incurred, instant, lambdas, eps_hats)


@dataclass(frozen=True, eq=False)
class HedgeResult:
    master: RunRecord
    instances: tuple[RunRecord, ...]
    lambda_grid: tuple[float, ...]
    final_weights: np.ndarray


def run_hedge_on_trace(
    trace: envs.Trace,
    base: LearnerConfig,
    lambda_grid,
    eta_master: float | None = None,
    label: str = "hedge",
) -> HedgeResult:
    """Exponential-weights master over constant-tilt learner instances.

    Every instance shares ``base`` except for its constant tilt from
    ``lambda_grid``.  The master mixes instance points with its current
    weights, then reweights by the instances' realized losses.
    """
    grid = tuple(float(v) for v in lambda_grid)
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    T, d = trace.horizon, trace.dim
    M = len(grid)
    if eta_master is None:
        eta_master = math.sqrt(8.0 * math.log(max(M, 2)) / T)

    configs = [
        replace(base, tilt_mode="constant" if lam > 0 else "zero", lam=lam) for lam in grid
    ]
    states = [init_state(d, cfg) for cfg in configs]
    master = MasterState(tuple(states), SimplexPoint.uniform(M))

    inst_decisions = np.zeros((M, T, d))
    inst_incurred = np.zeros((M, T))
    inst_instant = np.zeros((M, T))
    dec = np.zeros((T, d))
    inc = np.zeros(T)
    inst = np.zeros(T)

    for t in range(T):
        comp_value = trace.comparator_value(t)
        x_master = master_prediction(master).weights
        dec[t] = x_master
        inc[t] = float(x_master @ trace.losses[t])
        inst[t] = trace.expected_value(t, x_master) - comp_value

        losses_t = np.zeros(M)
        new_states = []
        for j, (cfg, st) in enumerate(zip(configs, master.instance_states)):
            xj = st.point.weights
            inst_decisions[j, t] = xj
            inst_incurred[j, t] = float(xj @ trace.losses[t])
            inst_instant[j, t] = trace.expected_value(t, xj) - comp_value
            losses_t[j] = inst_incurred[j, t]
            new_states.append(tdmd_step(st, trace.gradient(t, xj), trace.stresses[t], cfg.eta, cfg.lam))
        master = MasterState(tuple(new_states), master.master_weights)
        master = hedge_master_step(master, losses_t, eta_master)

    zeros = np.zeros(T)
    instances = tuple(
        RunRecord(
            f"{label}_lam_{grid[j]:g}",
            inst_decisions[j],
            inst_incurred[j],
            inst_instant[j],
            np.full(T, grid[j]),
            zeros.copy(),
        )
        for j in range(M)
    )
    master_record = RunRecord(label, dec, inc, inst, zeros.copy(), zeros.copy())
    return HedgeResult(master_record, instances, grid, master.master_weights.weights.copy())


# ---------------------------------------------------------------------------
# Experiments and sweeps


def _write_run_csv(record: RunRecord, path) -> None:
    cumulative = np.cumsum(record.instant_regret)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "instant_regret", "cumulative_regret", "lambda_t", "epsilon_hat"])
        for t in range(record.horizon):
            writer.writerow(
                [
                    str(t + 1),
                    format(record.instant_regret[t], ".17g"),
                    format(cumulative[t], ".17g"),
                    format(record.lambdas[t], ".17g"),
                    format(record.epsilon_hats[t], ".17g"),
                ]
            )


def run_experiment(config: ExperimentConfig, out_dir) -> dict[str, RegretReport]:
    """Run every configured learner on one shared trace and write outputs."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir: cannot create {out}: {exc}") from exc

    trace = envs.generate(config.environment)
    envs.export_trace_csv(trace, out / "trace.csv")

    reports: dict[str, RegretReport] = {}
    for index, (label, learner) in enumerate(config.learners):
        record = run_on_trace(trace, learner, label, split_seed(config.seed, "learner", index))
        report = dynamic_regret(record, trace, config.tail_window, config.outlier_ks)
        _write_run_csv(record, out / f"run_{label}.csv")
        (out / f"report_{label}.json").write_text(report.to_json() + "\n")
        reports[label] = report

    if config.calibration:
        from .drift import calibration_fit

        fit = calibration_fit(trace.rounds())
        payload = {"a": fit.a, "b": fit.b, "max_violation": fit.max_violation}
        (out / "calibration.json").write_text(json.dumps(payload, indent=2) + "\n")
    return reports


def demo_two_expert(seed: int = 0) -> ExperimentConfig:
    """Canned switching-regime comparison of three learners.

    Ten switches with 200-round segments (plus a leading segment, so every
    switch lands inside the horizon), five-round stress windows, and the
    standard learner trio: untilted exponentiated gradient, fixed-share with
    the 1/T mixing rate, and the stress-tilted learner with a constant tilt
    strong enough to re-cross the accumulated log-weight gap within the
    stress window.
    """
    switches, segment = 10, 200
    horizon = (switches + 1) * segment
    eta = default_eta(2, horizon)
    env = envs.make_two_expert_spec(
        switches, segment, horizon=horizon, stress_window=5, seed=split_seed(seed, "env", 0)
    )
    learners = (
        ("eg", LearnerConfig(eta=eta, tilt_mode="zero")),
        ("fixed_share", LearnerConfig(eta=eta, algorithm="fixed_share", share_alpha=1.0 / horizon)),
        ("tdmd", LearnerConfig(eta=eta, tilt_mode="constant", lam=400.0)),
    )
    return ExperimentConfig(environment=env, learners=learners, seed=seed)


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


SWEEP_PARAMETERS = ("lambda", "eta", "T", "intensity")


def _apply_sweep_value(config: ExperimentConfig, parameter: str, value) -> ExperimentConfig:
    if parameter == "lambda":
        spec = config.environment
        if spec.kind == "stationary":
            sigma = np.asarray(spec.params.get("sigma_bar", [0.0, 0.0]), dtype=float)
            if value > 0 and not np.any(sigma != 0):
                raise ConfigError("env.sigma_bar: over-tilt sweep needs a nonzero stress vector")
        learners = tuple(
            (label, replace(cfg, tilt_mode="constant" if value > 0 else "zero", lam=float(value)))
            for label, cfg in config.learners
        )
        return ExperimentConfig(
            config.environment, learners, config.seed, config.outlier_ks,
            config.tail_window, config.calibration, config.sweep_seeds,
        )
    if parameter == "eta":
        learners = tuple((label, replace(cfg, eta=float(value))) for label, cfg in config.learners)
        return ExperimentConfig(
            config.environment, learners, config.seed, config.outlier_ks,
            config.tail_window, config.calibration, config.sweep_seeds,
        )
    if parameter == "T":
        spec = config.environment
        horizon = int(value)
        params = dict(spec.params)
        if spec.kind == "two_expert_switch":
            params["segment_len"] = max(1, horizon // (int(params.get("switches", 0)) + 1))
        elif spec.kind not in ("stationary", "adversarial_a", "adversarial_b"):
            raise ConfigError(f"env.kind: horizon sweep unsupported for {spec.kind}")
        env = envs.EnvironmentSpec(spec.kind, horizon, params, spec.seed)
        return ExperimentConfig(
            env, config.learners, config.seed, config.outlier_ks,
            config.tail_window, config.calibration, config.sweep_seeds,
        )
    if parameter == "intensity":
        spec = config.environment
        if spec.kind != "two_expert_switch":
            raise ConfigError("env.kind: intensity sweep needs the switching environment")
        params = dict(spec.params)
        params["loss_gap"] = float(value)
        params["regime_gap"] = float(value)
        env = envs.EnvironmentSpec(spec.kind, spec.horizon, params, spec.seed)
        return ExperimentConfig(
            env, config.learners, config.seed, config.outlier_ks,
            config.tail_window, config.calibration, config.sweep_seeds,
        )
    raise ConfigError(f"parameter: unknown sweep parameter {parameter!r}")


def sweep(config: ExperimentConfig, parameter: str, grid, out_path=None) -> list[dict]:
    """Mean/stddev cumulative regret per learner over a parameter grid.

    Each grid cell reruns every learner on ``sweep_seeds`` freshly seeded
    traces.  Cells execute in a thread pool capped by the
    ``TRUST_DECAY_THREADS`` environment variable; results are reduced in
    fixed grid order.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("grid: must be nonempty")
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"parameter: unknown sweep parameter {parameter!r}")

    cells = [(value, _apply_sweep_value(config, parameter, value)) for value in grid]

    def run_cell(cell):
        value, cell_config = cell
        per_label: dict[str, list[float]] = {label: [] for label, _ in cell_config.learners}
        for i in range(cell_config.sweep_seeds):
            env_seed = split_seed(cell_config.seed, f"sweep:{parameter}:{value}", i)
            spec = envs.EnvironmentSpec(
                cell_config.environment.kind,
                cell_config.environment.horizon,
                cell_config.environment.params,
                env_seed,
            )
            trace = envs.generate(spec)
            for index, (label, learner) in enumerate(cell_config.learners):
                record = run_on_trace(trace, learner, label, split_seed(env_seed, "learner", index))
                per_label[label].append(record.cumulative_regret)
        return [
            {
                "parameter": parameter,
                "value": float(value),
                "label": label,
                "mean_regret": float(np.mean(vals)),
                "std_regret": float(np.std(vals)),
                "seeds": cell_config.sweep_seeds,
            }
            for label, vals in per_label.items()
        ]

    workers = min(_threads(), len(cells))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(cell) for cell in cells]
    rows = [row for cell_rows in results for row in cell_rows]

    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["parameter", "value", "label", "mean_regret", "std_regret", "seeds"])
            for row in rows:
                writer.writerow(
                    [
                        row["parameter"],
                        format(row["value"], ".17g"),
                        row["label"],
                        format(row["mean_regret"], ".17g"),
                        format(row["std_regret"], ".17g"),
                        str(row["seeds"]),
                    ]
                )
    return rows
