"""Synthetic drifting environments.

Each generator turns an :class:`EnvironmentSpec` into a :class:`Trace`:
per-round loss vectors, stress signals, true per-round drift, switch flags,
and oracle comparators.  Traces are deterministic functions of
``(kind, params, seed)``; all randomness flows through a single PCG64 stream
derived from the spec seed (see ``seeding``).

Losses are clipped into [0, 1] with min/max so the gradient bound stays 1.
Stress vectors are bounded in max-abs norm by the trace's ``stress_bound``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .drift import gaussian_kl_general
from .geometry import SimplexPoint
from .seeding import generator, split_seed

KINDS = (
    "two_expert_switch",
    "gaussian_drift",
    "stationary",
    "volatility_regime",
    "adversarial_a",
    "adversarial_b",
)


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    """Declarative description of a synthetic environment."""

    kind: str
    horizon: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


@dataclass(frozen=True, eq=False)
class RoundData:
    """One emitted round; ``t`` is 1-indexed."""

    t: int
    loss: np.ndarray
    stress: np.ndarray
    epsilon_true: float
    switch_flag: bool
    regime_id: int
    comparator: SimplexPoint
    expected_loss: np.ndarray
    outlier: bool = False


@dataclass(eq=False)
class Trace:
    """Array-backed environment trace shared by every learner in a run."""

    spec: EnvironmentSpec
    losses: np.ndarray
    stresses: np.ndarray
    epsilons: np.ndarray
    switch_flags: np.ndarray
    regime_ids: np.ndarray
    expected_losses: np.ndarray
    comparators: np.ndarray
    loss_kind: str = "linear"
    quadratic_target: np.ndarray | None = None
    grad_bound: float = 1.0
    stress_bound: float = 1.0
    outlier_flags: np.ndarray | None = None
    _rounds: list | None = field(default=None, repr=False)

    @property
    def horizon(self) -> int:
        return self.losses.shape[0]

    @property
    def dim(self) -> int:
        return self.losses.shape[1]

    def expected_value(self, t: int, x: np.ndarray) -> float:
        """f_t(x) for decision x (0-indexed round t)."""
        if self.loss_kind == "quadratic":
            diff = x - self.quadratic_target
            return float(diff @ diff)
        return float(x @ self.expected_losses[t])

    def gradient(self, t: int, x: np.ndarray) -> np.ndarray:
        """Subgradient feedback at decision x (0-indexed round t)."""
        if self.loss_kind == "quadratic":
            return 2.0 * (x - self.quadratic_target)
        return self.losses[t]

    def comparator_value(self, t: int) -> float:
        return self.expected_value(t, self.comparators[t])

    def rounds(self) -> list[RoundData]:
        if self._rounds is None:
            flags = self.outlier_flags
            self._rounds = [
                RoundData(
                    t + 1,
                    self.losses[t],
                    self.stresses[t],
                    float(self.epsilons[t]),
                    bool(self.switch_flags[t]),
                    int(self.regime_ids[t]),
                    SimplexPoint(self.comparators[t]),
                    self.expected_losses[t],
                    bool(flags[t]) if flags is not None else False,
                )
                for t in range(self.horizon)
            ]
        return self._rounds


def _vertex_rows(indices: np.ndarray, d: int) -> np.ndarray:
    rows = np.zeros((indices.size, d))
    rows[np.arange(indices.size), indices] = 1.0
    return rows


def two_expert_switch_env(spec: EnvironmentSpec) -> Trace:
    """Two experts, alternating regimes, window-gated stress.

    Regime ``k`` starts at round ``1 + k * segment_len``; the first segment is
    rounds ``1 .. segment_len``.  All ``switches`` regime changes must land
    inside the horizon, which needs ``T >= switches * segment_len + 1``.
    Losses are deterministic per regime (``0.5 -/+ loss_gap / 2`` on the
    favoured/stale expert); the per-switch drift is the divergence between
    the two-point outcome distributions with parameter gap ``regime_gap``.
    """
    T = spec.horizon
    p = spec.params
    K = int(p.get("switches", 0))
    L = int(p.get("segment_len", T))
    H = int(p.get("stress_window", 5))
    loss_gap = float(p.get("loss_gap", 1.0))
    regime_gap = float(p.get("regime_gap", 0.8))
    if K < 0 or L < 1 or H < 0:
        raise ValueError("switches, segment_len, stress_window must be nonnegative")
    if not 0 <= loss_gap <= 1:
        raise ValueError("loss_gap must lie in [0, 1]")
    if not 0 <= regime_gap < 1:
        raise ValueError("regime_gap must lie in [0, 1)")
    if K * L > T - 1:
        raise ValueError(
            f"switch schedule overruns the horizon: {K} switches of length {L} "
            f"need horizon >= {K * L + 1}, got {T}"
        )

    t_idx = np.arange(1, T + 1)
    regime = np.minimum((t_idx - 1) // L, K)
    favored = regime % 2
    lo, hi = 0.5 - loss_gap / 2.0, 0.5 + loss_gap / 2.0
    losses = np.where(favored[:, None] == np.arange(2)[None, :], lo, hi)

    switch_flags = (t_idx > 1) & ((t_idx - 1) % L == 0) & ((t_idx - 1) // L <= K)
    if regime_gap > 0:
        eps_switch = regime_gap * math.log((1 + regime_gap) / (1 - regime_gap))
    else:
        eps_switch = 0.0
    epsilons = np.where(switch_flags, eps_switch, 0.0)

    last_switch = 1 + regime * L
    in_window = (regime >= 1) & (t_idx - last_switch < H)
    stresses = np.zeros((T, 2))
    sign = np.where(favored[:, None] == np.arange(2)[None, :], -1.0, 1.0)
    stresses[in_window] = sign[in_window]

    comp_idx = favored if loss_gap > 0 else np.zeros(T, dtype=int)
    comparators = _vertex_rows(comp_idx, 2)

    return Trace(
        spec=spec,
        losses=losses,
        stresses=stresses,
        epsilons=epsilons,
        switch_flags=switch_flags,
        regime_ids=regime.astype(int),
        expected_losses=losses.copy(),
        comparators=comparators,
        grad_bound=hi,
        stress_bound=1.0,
    )


def _linear_loss_map(p: dict, obs_dim: int) -> tuple[np.ndarray, np.ndarray]:
    A = np.atleast_2d(np.asarray(p.get("loss_matrix", np.eye(obs_dim)), dtype=float))
    b = np.asarray(p.get("loss_offset", np.zeros(A.shape[0])), dtype=float)
    if A.shape[1] != obs_dim or b.size != A.shape[0] or A.shape[0] < 2:
        raise ValueError("loss map shapes are inconsistent")
    return A, b


def gaussian_drift_env(spec: EnvironmentSpec) -> Trace:
    """Gaussian observations with a moving mean and fixed covariance.

    Per-round drift is the closed-form Gaussian divergence of consecutive
    means.  The oracle stress is the sign pattern of the expected-loss change
    (unit max-abs norm), active only on rounds with nonzero drift.  Expected
    losses are mapped from the true mean; boundary clipping bias is accepted.
    """
    T = spec.horizon
    p = spec.params
    means = np.atleast_2d(np.asarray(p["means"], dtype=float))
    if means.shape[0] != T:
        raise ValueError("mean schedule length must equal the horizon")
    m = means.shape[1]
    cov = np.atleast_2d(np.asarray(p.get("cov", np.eye(m)), dtype=float))
    if np.linalg.eigvalsh(cov)[0] <= 1e-10:
        raise ValueError("covariance must be positive definite")
    A, b = _linear_loss_map(p, m)

    rng = generator(split_seed(spec.seed, spec.kind, 0))
    chol = np.linalg.cholesky(cov)
    z = means + rng.standard_normal((T, m)) @ chol.T
    losses = np.clip(z @ A.T + b, 0.0, 1.0)
    expected = np.clip(means @ A.T + b, 0.0, 1.0)

    epsilons = np.zeros(T)
    if T > 1:
        diffs = means[1:] - means[:-1]
        solved = np.linalg.solve(cov, diffs.T).T
        epsilons[1:] = 0.5 * np.sum(diffs * solved, axis=1)

    stresses = np.zeros_like(expected)
    if T > 1:
        pattern = np.sign(expected[1:] - expected[:-1])
        active = epsilons[1:] > 0
        stresses[1:][active] = pattern[active]

    comparators = _vertex_rows(np.argmin(expected, axis=1), expected.shape[1])
    return Trace(
        spec=spec,
        losses=losses,
        stresses=stresses,
        epsilons=epsilons,
        switch_flags=np.zeros(T, dtype=bool),
        regime_ids=np.zeros(T, dtype=int),
        expected_losses=expected,
        comparators=comparators,
    )


def stationary_env(spec: EnvironmentSpec) -> Trace:
    """Fixed distribution, constant stress, zero drift.

    ``loss_kind='linear'`` draws noisy losses around a fixed mean vector;
    ``loss_kind='quadratic'`` exposes the strongly convex objective
    ``f(x) = ||x - target||^2`` through gradient feedback.
    """
    T = spec.horizon
    p = spec.params
    kind = p.get("loss_kind", "linear")
    sigma_bar = np.asarray(p.get("sigma_bar", [0.0, 0.0]), dtype=float)

    if kind == "quadratic":
        target = np.asarray(p["target"], dtype=float)
        d = target.size
        SimplexPoint(target)  # validates
        if sigma_bar.size != d:
            raise ValueError("sigma_bar dimension mismatch")
        vertex_values = np.array([float((e - target) @ (e - target)) for e in np.eye(d)])
        expected = np.tile(vertex_values, (T, 1))
        losses = expected.copy()
        comparators = np.tile(target, (T, 1))
        trace = Trace(
            spec=spec,
            losses=losses,
            stresses=np.tile(sigma_bar, (T, 1)),
            epsilons=np.zeros(T),
            switch_flags=np.zeros(T, dtype=bool),
            regime_ids=np.zeros(T, dtype=int),
            expected_losses=expected,
            comparators=comparators,
            loss_kind="quadratic",
            quadratic_target=target,
            grad_bound=2.0,
            stress_bound=float(np.max(np.abs(sigma_bar), initial=0.0)) or 1.0,
        )
        return trace

    mean = np.asarray(p["mean"], dtype=float)
    d = mean.size
    if d < 2:
        raise ValueError("need at least two coordinates")
    if np.any(mean < 0) or np.any(mean > 1):
        raise ValueError("mean losses must lie in [0, 1]")
    if sigma_bar.size != d:
        raise ValueError("sigma_bar dimension mismatch")
    noise_sd = float(p.get("noise_sd", 0.0))
    rng = generator(split_seed(spec.seed, spec.kind, 0))
    losses = np.clip(mean + noise_sd * rng.standard_normal((T, d)), 0.0, 1.0)
    expected = np.tile(mean, (T, 1))
    comparators = _vertex_rows(np.full(T, int(np.argmin(mean)), dtype=int), d)
    return Trace(
        spec=spec,
        losses=losses,
        stresses=np.tile(sigma_bar, (T, 1)),
        epsilons=np.zeros(T),
        switch_flags=np.zeros(T, dtype=bool),
        regime_ids=np.zeros(T, dtype=int),
        expected_losses=expected,
        comparators=comparators,
        stress_bound=float(np.max(np.abs(sigma_bar), initial=0.0)) or 1.0,
    )


def volatility_regime_env(spec: EnvironmentSpec) -> Trace:
    """Alternating low/high-volatility Gaussian blocks.

    Stress is a realized-volatility proxy: the per-coordinate standard
    deviation of the last ten observed loss vectors, rescaled when needed so
    its max-abs norm stays within ``stress_bound``.  Boundary drift uses the
    general Gaussian divergence (means and covariances both change).
    """
    T = spec.horizon
    p = spec.params
    block = int(p.get("block_len", 50))
    if block < 1:
        raise ValueError("block_len must be >= 1")
    mu_low = np.atleast_1d(np.asarray(p["mu_low"], dtype=float))
    mu_high = np.atleast_1d(np.asarray(p["mu_high"], dtype=float))
    m = mu_low.size
    cov_low = np.atleast_2d(np.asarray(p.get("cov_low", np.eye(m)), dtype=float))
    cov_high = np.atleast_2d(np.asarray(p.get("cov_high", np.eye(m)), dtype=float))
    for c in (cov_low, cov_high):
        if np.linalg.eigvalsh(c)[0] <= 1e-10:
            raise ValueError("covariances must be positive definite")
    A, b = _linear_loss_map(p, m)
    bound = float(p.get("stress_bound", 1.0))
    window = int(p.get("volatility_window", 10))

    t_idx = np.arange(1, T + 1)
    regime = (t_idx - 1) // block
    is_high = regime % 2 == 1
    switch_flags = (t_idx > 1) & ((t_idx - 1) % block == 0)

    rng = generator(split_seed(spec.seed, spec.kind, 0))
    chol_low = np.linalg.cholesky(cov_low)
    chol_high = np.linalg.cholesky(cov_high)
    normals = rng.standard_normal((T, m))
    z = np.where(
        is_high[:, None],
        mu_high + normals @ chol_high.T,
        mu_low + normals @ chol_low.T,
    )
    losses = np.clip(z @ A.T + b, 0.0, 1.0)
    means = np.where(is_high[:, None], mu_high, mu_low)
    expected = np.clip(means @ A.T + b, 0.0, 1.0)

    kl_low_to_high = gaussian_kl_general(mu_high, cov_high, mu_low, cov_low)
    kl_high_to_low = gaussian_kl_general(mu_low, cov_low, mu_high, cov_high)
    epsilons = np.zeros(T)
    epsilons[switch_flags & is_high] = kl_low_to_high
    epsilons[switch_flags & ~is_high] = kl_high_to_low

    stresses = np.zeros_like(losses)
    for t in range(1, T):
        past = losses[max(0, t - window) : t]
        if past.shape[0] >= 2:
            raw = past.std(axis=0)
            top = float(np.max(np.abs(raw), initial=0.0))
            if top > bound:
                raw = raw * (bound / top)
            stresses[t] = raw

    comparators = _vertex_rows(np.argmin(expected, axis=1), expected.shape[1])
    return Trace(
        spec=spec,
        losses=losses,
        stresses=stresses,
        epsilons=epsilons,
        switch_flags=switch_flags,
        regime_ids=regime.astype(int),
        expected_losses=expected,
        comparators=comparators,
        stress_bound=bound,
    )


def adversarial_incomparability_a(spec: EnvironmentSpec) -> Trace:
    """Large per-round drift, frozen comparator.

    The observation distribution alternates between two unit-variance
    Gaussians one mean apart (drift 0.5 every round) while the induced
    expected losses keep the same argmin, so the comparator never moves.
    """
    T = spec.horizon
    means = ((np.arange(T) % 2).astype(float))[:, None]
    inner = EnvironmentSpec(
        "gaussian_drift",
        T,
        {
            "means": means,
            "cov": [[1.0]],
            "loss_matrix": [[0.05], [-0.05]],
            "loss_offset": [0.25, 0.75],
        },
        spec.seed,
    )
    trace = gaussian_drift_env(inner)
    trace.spec = spec
    return trace


def adversarial_incomparability_b(spec: EnvironmentSpec) -> Trace:
    """Zero drift, rapidly moving comparator.

    The outcome distribution is fixed (all drift terms are zero) while the
    loss function itself alternates between the two vertex orderings, so the
    comparator path grows linearly.
    """
    T = spec.horizon
    flip = np.arange(T) % 2
    losses = np.where(flip[:, None] == np.arange(2)[None, :], 0.0, 1.0)
    comparators = _vertex_rows(flip, 2)
    return Trace(
        spec=spec,
        losses=losses,
        stresses=np.zeros((T, 2)),
        epsilons=np.zeros(T),
        switch_flags=np.zeros(T, dtype=bool),
        regime_ids=flip.astype(int),
        expected_losses=losses.copy(),
        comparators=comparators,
    )


_GENERATORS = {
    "two_expert_switch": two_expert_switch_env,
    "gaussian_drift": gaussian_drift_env,
    "stationary": stationary_env,
    "volatility_regime": volatility_regime_env,
    "adversarial_a": adversarial_incomparability_a,
    "adversarial_b": adversarial_incomparability_b,
}


def generate(spec: EnvironmentSpec) -> Trace:
    """Build the deterministic trace for a spec."""
    return _GENERATORS[spec.kind](spec)


def outlier_injection(trace: Trace, k: int, seed: int) -> Trace:
    """Replace ``k`` seed-chosen rounds with adversarially flipped losses.

    Each injected round gets ``loss -> 1 - loss`` (worst case against a
    learner that has converged on the clean round), expected losses flipped
    to match, and the comparator recomputed.  Injected rounds are tagged.
    """
    if trace.loss_kind != "linear":
        raise ValueError("outlier injection applies to linear-loss traces")
    T = trace.horizon
    if k < 0 or k > T:
        raise ValueError(f"cannot inject {k} outliers into {T} rounds")
    rng = generator(split_seed(seed, "outliers", 0))
    chosen = rng.choice(T, size=k, replace=False) if k else np.empty(0, dtype=int)
    flags = np.zeros(T, dtype=bool)
    flags[chosen] = True
    losses = trace.losses.copy()
    expected = trace.expected_losses.copy()
    losses[flags] = 1.0 - losses[flags]
    expected[flags] = 1.0 - expected[flags]
    comparators = trace.comparators.copy()
    if k:
        comparators[flags] = _vertex_rows(np.argmin(expected[flags], axis=1), trace.dim)
    return Trace(
        spec=trace.spec,
        losses=losses,
        stresses=trace.stresses,
        epsilons=trace.epsilons,
        switch_flags=trace.switch_flags,
        regime_ids=trace.regime_ids,
        expected_losses=expected,
        comparators=comparators,
        loss_kind=trace.loss_kind,
        quadratic_target=trace.quadratic_target,
        grad_bound=trace.grad_bound,
        stress_bound=trace.stress_bound,
        outlier_flags=flags,
    )


def make_two_expert_spec(
    switches: int,
    segment_len: int,
    horizon: int | None = None,
    stress_window: int = 5,
    loss_gap: float = 1.0,
    regime_gap: float = 0.8,
    seed: int = 0,
) -> EnvironmentSpec:
    """Spec helper; the default horizon gives every regime a full segment."""
    T = horizon if horizon is not None else (switches + 1) * segment_len
    return EnvironmentSpec(
        "two_expert_switch",
        T,
        {
            "switches": switches,
            "segment_len": segment_len,
            "stress_window": stress_window,
            "loss_gap": loss_gap,
            "regime_gap": regime_gap,
        },
        seed,
    )


def switch_intensity_family(horizon: int, stress_window: int = 3):
    """Uniformly spaced switches whose jump size scales with intensity.

    Returns ``family(s, seed) -> Trace`` with ``round(sqrt(T))`` switches and
    both the loss gap and the regime jump equal to ``s``, so the trace's
    cumulative drift path grows monotonically with the intensity.
    """
    switches = max(1, round(math.sqrt(horizon)))
    segment = horizon // (switches + 1)
    if segment < 1:
        raise ValueError("horizon too short for the switch family")

    def family(intensity: float, seed: int) -> Trace:
        if not 0 <= intensity < 1:
            raise ValueError("intensity must lie in [0, 1)")
        spec = make_two_expert_spec(
            switches,
            segment,
            horizon=horizon,
            stress_window=stress_window,
            loss_gap=intensity,
            regime_gap=intensity,
            seed=seed,
        )
        return generate(spec)

    return family


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_trace_csv(trace: Trace, path) -> None:
    """Write the trace table: t, losses, stresses, epsilon, switch, regime."""
    d = trace.dim
    header = (
        ["t"]
        + [f"loss_{i}" for i in range(d)]
        + [f"stress_{i}" for i in range(d)]
        + ["epsilon", "switch_flag", "regime_id"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(trace.horizon):
            row = (
                [str(t + 1)]
                + [_fmt(v) for v in trace.losses[t]]
                + [_fmt(v) for v in trace.stresses[t]]
                + [_fmt(trace.epsilons[t]), str(int(trace.switch_flags[t])), str(int(trace.regime_ids[t]))]
            )
            writer.writerow(row)


@dataclass(eq=False)
class TraceTable:
    """The CSV-portable slice of a trace."""

    t: np.ndarray
    losses: np.ndarray
    stresses: np.ndarray
    epsilons: np.ndarray
    switch_flags: np.ndarray
    regime_ids: np.ndarray


def import_trace_csv(path) -> TraceTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = sum(1 for name in header if name.startswith("loss_"))
        rows = list(reader)
    n = len(rows)
    table = TraceTable(
        t=np.zeros(n, dtype=int),
        losses=np.zeros((n, d)),
        stresses=np.zeros((n, d)),
        epsilons=np.zeros(n),
        switch_flags=np.zeros(n, dtype=bool),
        regime_ids=np.zeros(n, dtype=int),
    )
    for i, row in enumerate(rows):
        table.t[i] = int(row[0])
        table.losses[i] = [float(v) for v in row[1 : 1 + d]]
        table.stresses[i] = [float(v) for v in row[1 + d : 1 + 2 * d]]
        table.epsilons[i] = float(row[1 + 2 * d])
        table.switch_flags[i] = bool(int(row[2 + 2 * d]))
        table.regime_ids[i] = int(row[3 + 2 * d])
    return table
