"""Robustness and performance measurements.

Two families live here.  Belief-space measures work on finite outcome
distributions: ``worst_case_tilt`` solves the exponential-tilting maximisation
over a KL ball, ``fragility`` turns it into worst-case excess risk, and
``belief_bandwidth`` inverts fragility at a tolerance.  Decision-space
measures work on run records: ``dynamic_regret`` aggregates per-round regret
against the oracle comparator together with drift/stress path lengths,
per-switch tails, and trimmed (outlier-excluded) regret, and
``fragility_index`` searches for the largest drift budget a learner absorbs
at a target regret rate.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import SimplexPoint
from .seeding import generator, split_seed

KL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FiniteDistribution:
    """Finite outcome distribution with a candidate-decision loss table.

    ``loss_table[i, j]`` is the loss of candidate ``j`` under outcome ``i``;
    entries must lie in [0, 1].  For linear losses on the simplex the inner
    minimisation over decisions is attained at the candidates (vertices), so
    the table columns are the full decision set.
    """

    probabilities: SimplexPoint
    loss_table: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.loss_table, dtype=float)
        if table.ndim != 2:
            raise ValueError("loss table must be 2-D (outcomes x candidates)")
        if table.shape[0] != self.probabilities.dim:
            raise ValueError("loss table rows must match the outcome count")
        if np.any(table < -1e-12) or np.any(table > 1 + 1e-12):
            raise ValueError("losses must lie in [0, 1]")
        table = np.clip(table, 0.0, 1.0)
        table.flags.writeable = False
        object.__setattr__(self, "loss_table", table)

    @property
    def n_outcomes(self) -> int:
        return self.probabilities.dim

    @property
    def n_candidates(self) -> int:
        return self.loss_table.shape[1]

    def decision_losses(self, x) -> np.ndarray:
        """Per-outcome loss of decision ``x`` (candidate index or mixture)."""
        if np.isscalar(x) or isinstance(x, (int, np.integer)):
            return self.loss_table[:, int(x)]
        weights = x.weights if isinstance(x, SimplexPoint) else np.asarray(x, dtype=float)
        if weights.size != self.n_candidates:
            raise ValueError("mixture length must match the candidate count")
        return self.loss_table @ weights


@dataclass(frozen=True, eq=False)
class TiltResult:
    value: float
    tilted: SimplexPoint
    eta_star: float


def _tilt_kl(base: np.ndarray, h: np.ndarray, eta: float) -> tuple[np.ndarray, float]:
    w = base * np.exp(eta * (h - h.max()))
    q = w / w.sum()
    mask = q > 0
    kl = float(np.sum(q[mask] * (np.log(q[mask]) - np.log(base[mask]))))
    return q, max(kl, 0.0)


def worst_case_tilt(D: FiniteDistribution, h, epsilon: float) -> TiltResult:
    """Maximise ``E_Q[h]`` over distributions with ``KL(Q || D) <= epsilon``.

    The maximiser is an exponential tilt ``Q ~ D * exp(eta * h)`` whose KL
    from ``D`` grows continuously and monotonically in ``eta``, so the radius
    constraint is solved by bisection on ``eta``.  Once the ball is wide
    enough to contain the point mass on the supported argmax of ``h``, the
    supremum saturates at that maximum.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 1 or h.size != D.n_outcomes:
        raise ValueError("h must assign one value per outcome")
    if not np.all(np.isfinite(h)):
        raise ValueError("h must be finite")
    if epsilon < 0:
        raise ValueError("KL radius must be nonnegative")

    base = D.probabilities.weights
    support = base > 0
    hs = h[support]
    bs = base[support]
    if epsilon == 0:
        return TiltResult(float(bs @ hs), D.probabilities, 0.0)

    h_max = hs.max()
    argmax_mass = float(bs[hs >= h_max - 1e-15].sum())
    kl_saturate = -math.log(argmax_mass)
    if epsilon >= kl_saturate - 1e-12:
        tilted = np.zeros_like(base)
        sel = support.copy()
        sel[support] = hs >= h_max - 1e-15
        tilted[sel] = base[sel] / argmax_mass
        eta_star = math.inf if kl_saturate > 0 else 0.0
        return TiltResult(float(h_max), SimplexPoint(tilted), eta_star)

    lo, hi = 0.0, 1.0
    q_hi, kl_hi = _tilt_kl(bs, hs, hi)
    grow = 0
    while kl_hi < epsilon:
        hi *= 2.0
        q_hi, kl_hi = _tilt_kl(bs, hs, hi)
        grow += 1
        if grow > 200:
            raise RuntimeError("tilt bisection failed to bracket the radius")
    q = q_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        q, kl = _tilt_kl(bs, hs, mid)
        if abs(kl - epsilon) <= KL_TOL:
            lo = hi = mid
            break
        if kl < epsilon:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    eta_star = 0.5 * (lo + hi)
    q, _ = _tilt_kl(bs, hs, eta_star)
    tilted = np.zeros_like(base)
    tilted[support] = q
    return TiltResult(float(q @ hs), SimplexPoint(tilted), float(eta_star))


def fragility(x, D: FiniteDistribution, epsilon: float) -> float:
    """Worst-case excess risk of ``x`` over the KL ball of radius epsilon.

    Exchanging the max over alternatives with the sup over the ball is exact
    here, so the value is the max over candidates ``u`` of the tilted mean of
    ``loss(x) - loss(u)``.  At radius zero this is the excess risk at ``D``;
    it is nondecreasing in the radius.
    """
    if epsilon < 0:
        raise ValueError("KL radius must be nonnegative")
    own = D.decision_losses(x)
    best = -math.inf
    for u in range(D.n_candidates):
        value = worst_case_tilt(D, own - D.loss_table[:, u], epsilon).value
        best = max(best, value)
    return max(best, 0.0)


def saturation_radius(D: FiniteDistribution) -> float:
    """KL radius beyond which every supported point mass is in the ball."""
    support = D.probabilities.weights[D.probabilities.weights > 0]
    return float(-np.log(support.min()))


BANDWIDTH_UNBOUNDED = math.inf


def belief_bandwidth(x, D: FiniteDistribution, delta: float, tol: float = 1e-6) -> float:
    """Largest KL radius before fragility exceeds ``delta``.

    Returns 0 when even the unperturbed excess risk exceeds the tolerance and
    the unbounded sentinel when fragility stays within it at the saturating
    radius.  Otherwise bisects the monotone fragility curve until the bracket
    is narrower than ``tol``.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if fragility(x, D, 0.0) > delta:
        return 0.0
    hi = saturation_radius(D)
    if fragility(x, D, hi) <= delta:
        return BANDWIDTH_UNBOUNDED
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fragility(x, D, mid) <= delta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Per-round telemetry of one learner on one trace."""

    label: str
    decisions: np.ndarray
    incurred_loss: np.ndarray
    instant_regret: np.ndarray
    lambdas: np.ndarray
    epsilon_hats: np.ndarray

    def __post_init__(self):
        n = self.decisions.shape[0]
        for name in ("incurred_loss", "instant_regret", "lambdas", "epsilon_hats"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} must have one entry per round")
        if self.instant_regret.size and self.instant_regret.min() < -1e-9:
            raise ValueError("instant regret below comparator optimality tolerance")

    @property
    def horizon(self) -> int:
        return self.decisions.shape[0]

    @property
    def cumulative_regret(self) -> float:
        return float(self.instant_regret.sum())


@dataclass(frozen=True)
class RegretReport:
    """Aggregated run diagnostics; see ``dynamic_regret``."""

    label: str
    cumulative_regret: float
    kl_path_length: float
    stress_variation: float
    comparator_path_length: float
    per_switch_tails: tuple[float, ...]
    trimmed_regret: dict[int, float]

    def to_json(self) -> str:
        payload = {
            "label": self.label,
            "cumulative_regret": self.cumulative_regret,
            "kl_path_length": self.kl_path_length,
            "stress_variation": self.stress_variation,
            "comparator_path_length": self.comparator_path_length,
            "per_switch_tails": list(self.per_switch_tails),
            "trimmed_regret": {str(k): v for k, v in self.trimmed_regret.items()},
        }
        return json.dumps(payload, indent=2)


def trimmed_regret(instant: np.ndarray, k: int) -> float:
    """Cumulative regret excluding the ``k`` largest per-round regrets.

    With nonnegative per-round regrets this equals the minimum over all
    excluded sets of size at most ``k``.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if k == 0:
        return float(instant.sum())
    if k >= instant.size:
        return 0.0
    order = np.sort(instant)
    return float(order[: instant.size - k].sum())


def per_switch_tails(
    instant: np.ndarray, switch_flags: np.ndarray, window: int | None = None
) -> tuple[float, ...]:
    """Regret accumulated in the recovery window after each switch.

    ``window=None`` extends each window to the next switch (or the end of the
    trace), capturing the full disbelief tail; an integer caps it.
    """
    switches = np.flatnonzero(switch_flags)
    tails = []
    for i, start in enumerate(switches):
        stop = switches[i + 1] if i + 1 < switches.size else instant.size
        if window is not None:
            stop = min(stop, start + window)
        tails.append(float(instant[start:stop].sum()))
    return tuple(tails)


def dynamic_regret(
    run: RunRecord,
    trace,
    tail_window: int | None = None,
    outlier_ks=(),
) -> RegretReport:
    """Fill the full regret report for a run on its trace.

    Besides cumulative regret this aggregates the trace's drift path length,
    the squared max-abs variation of the stress signal, the L1 path length of
    the oracle comparator, per-switch tail regrets, and trimmed regret for
    each requested exclusion budget ``k``.
    """
    if run.horizon != trace.horizon:
        raise ValueError("run and trace length mismatch")
    instant = run.instant_regret
    cumulative = float(instant.sum())

    s_path = float(np.sum(np.sqrt(np.maximum(trace.epsilons, 0.0) / 2.0)))
    comp = trace.comparators
    comp_path = float(np.sum(np.abs(comp[1:] - comp[:-1]))) if trace.horizon > 1 else 0.0
    stress = trace.stresses
    if trace.horizon > 1:
        stress_var = float(np.sum(np.max(np.abs(stress[1:] - stress[:-1]), axis=1) ** 2))
    else:
        stress_var = 0.0

    ks = sorted(set(int(k) for k in outlier_ks))
    trimmed = {k: trimmed_regret(instant, k) for k in ks}

    return RegretReport(
        label=run.label,
        cumulative_regret=cumulative,
        kl_path_length=s_path,
        stress_variation=stress_var,
        comparator_path_length=comp_path,
        per_switch_tails=per_switch_tails(instant, trace.switch_flags, tail_window),
        trimmed_regret=trimmed,
    )


@dataclass(frozen=True)
class FragilityIndexResult:
    """Outcome of the drift-tolerance search.

    ``value`` is the largest drift path length at which the mean regret stays
    within ``alpha * sqrt(T)``; ``probes`` records every probed intensity as
    ``(intensity, path_length, mean_regret)``.
    """

    value: float
    intensity: float
    threshold: float
    probes: tuple[tuple[float, float, float], ...]
    diagnostic: str = ""


def fragility_index(
    run_learner,
    alpha: float,
    horizon: int,
    drift_family,
    search_tol: float = 0.01,
    n_seeds: int = 10,
    max_intensity: float = 0.995,
    seed: int = 0,
) -> FragilityIndexResult:
    """Bisection estimate of the tolerated drift budget.

    ``drift_family(s, seed)`` must return traces whose drift path length is
    monotone in the intensity ``s``; ``run_learner(trace)`` returns a
    RunRecord.  Each probe averages the regret over ``n_seeds`` seeded
    traces.  The returned value is the path length of the largest intensity
    whose mean regret stays within ``alpha * sqrt(horizon)``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    threshold = alpha * math.sqrt(horizon)
    probes: list[tuple[float, float, float]] = []

    def probe(intensity: float) -> tuple[float, float]:
        regrets = []
        paths = []
        for i in range(n_seeds):
            trace = drift_family(intensity, split_seed(seed, "fi-probe", i))
            record = run_learner(trace)
            regrets.append(record.cumulative_regret)
            paths.append(float(np.sum(np.sqrt(np.maximum(trace.epsilons, 0.0) / 2.0))))
        path = float(np.mean(paths))
        mean_regret = float(np.mean(regrets))
        probes.append((intensity, path, mean_regret))
        return path, mean_regret

    path0, regret0 = probe(0.0)
    if regret0 > threshold:
        return FragilityIndexResult(
            0.0, 0.0, threshold, tuple(probes), "regret exceeds the budget even without drift"
        )
    path_hi, regret_hi = probe(max_intensity)
    if regret_hi <= threshold:
        return FragilityIndexResult(
            path_hi, max_intensity, threshold, tuple(probes), "feasible across the whole family"
        )

    lo, hi = 0.0, max_intensity
    best_path = path0
    best_s = 0.0
    while hi - lo > search_tol:
        mid = 0.5 * (lo + hi)
        path_mid, regret_mid = probe(mid)
        if regret_mid <= threshold:
            lo, best_path, best_s = mid, path_mid, mid
        else:
            hi = mid
    return FragilityIndexResult(best_path, best_s, threshold, tuple(probes))


@dataclass(frozen=True)
class SensitivityReport:
    """Coverage of the nominal deviation bound over resampling trials."""

    coverage: float
    coverage_2x: float
    bound: float
    deviations: tuple[float, ...]


def sensitivity_mc(
    x,
    D: FiniteDistribution,
    epsilon: float,
    alpha: float,
    sample_size: int,
    trials: int,
    seed: int = 0,
) -> SensitivityReport:
    """Monte Carlo check of the high-probability sensitivity bound.

    Each trial resamples ``sample_size`` outcomes from ``D``, forms the
    empirical mean loss of ``x``, computes the worst-case absolute gap
    between tilted means within the KL ball and that empirical mean, and
    compares it against ``sqrt(2 * epsilon * log(1 / alpha) / sample_size)``.
    Coverage at twice the bound is reported alongside for diagnostic use.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if sample_size < 1:
        raise ValueError("sample_size must be positive")
    rng = generator(split_seed(seed, "sensitivity", 0))
    own = D.decision_losses(x)
    probs = D.probabilities.weights
    bound = math.sqrt(2.0 * epsilon * math.log(1.0 / alpha) / sample_size)
    deviations = []
    for _ in range(trials):
        draws = rng.choice(D.n_outcomes, size=sample_size, p=probs)
        f_hat = float(own[draws].mean())
        up = worst_case_tilt(D, own - f_hat, epsilon).value
        down = worst_case_tilt(D, f_hat - own, epsilon).value
        deviations.append(max(up, down))
    dev = np.asarray(deviations)
    return SensitivityReport(
        coverage=float(np.mean(dev <= bound)),
        coverage_2x=float(np.mean(dev <= 2.0 * bound)),
        bound=bound,
        deviations=tuple(float(v) for v in dev),
    )


def export_fragility_sweep(D: FiniteDistribution, x, epsilons, path) -> None:
    """CSV sweep ``epsilon,fragility`` over the given radii."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "fragility"])
        for eps in epsilons:
            writer.writerow([format(float(eps), ".17g"), format(fragility(x, D, float(eps)), ".17g")])


def export_bandwidth_sweep(D: FiniteDistribution, x, deltas, path, tol: float = 1e-6) -> None:
    """CSV sweep ``delta,bandwidth``; unbounded bandwidth serialises as 'inf'."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "bandwidth"])
        for delta in deltas:
            bw = belief_bandwidth(x, D, float(delta), tol)
            cell = "inf" if math.isinf(bw) else format(bw, ".17g")
            writer.writerow([format(float(delta), ".17g"), cell])
