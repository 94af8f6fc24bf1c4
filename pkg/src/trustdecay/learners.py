"""Sequential update rules on the probability simplex.

The core update multiplies the current point by ``exp(-eta * (g + lam *
sigma))`` and renormalises: mirror descent under the negative-entropy
potential, with an additive stress tilt ``lam * sigma`` biasing mass away
from directions flagged as fragile.  With ``lam = 0`` this is plain
exponentiated gradient.  Variants here: a fixed-share baseline, an
exponential-weights master over parallel instances, a second-order step with
Mahalanobis projection, and a bandit step fed by importance-weighted loss
estimates.

All multiplicative updates subtract the max exponent before exponentiating;
after renormalisation that shift is exact and prevents overflow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    CLIP_FLOOR,
    PD_EIG_FLOOR,
    SimplexPoint,
    dual_values,
    project_simplex_mahalanobis,
)

TILT_MODES = ("zero", "constant", "fixed_kappa", "plugin")
ALGORITHMS = ("tdmd", "fixed_share", "ons", "bandit")


@dataclass(frozen=True)
class LearnerConfig:
    """Knobs for one sequential learner.

    ``tilt_mode`` selects the stress intensity schedule: ``zero`` disables the
    tilt, ``constant`` holds it at ``lam``, ``fixed_kappa`` sets
    ``kappa * sqrt(eps_t)`` from the environment's true drift (held for
    ``stress_window`` rounds after a switch), and ``plugin`` uses the same
    rule with a windowed drift estimate.  ``algorithm`` picks the update rule;
    the remaining fields only matter to the algorithms that read them.
    """

    eta: float
    algorithm: str = "tdmd"
    tilt_mode: str = "zero"
    kappa: float = 0.0
    lam: float = 0.0
    stress_window: int = 0
    plugin_window: int = 20
    exploration: float = 0.0
    ons_alpha: float = 1.0
    share_alpha: float = 0.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.tilt_mode not in TILT_MODES:
            raise ValueError(f"unknown tilt mode {self.tilt_mode!r}")
        if self.kappa < 0 or self.lam < 0:
            raise ValueError("tilt intensities must be nonnegative")
        if not 0 <= self.exploration <= 1:
            raise ValueError("exploration must lie in [0, 1]")
        if self.stress_window < 0 or self.plugin_window < 2:
            raise ValueError("invalid window length")
        if not self.ons_alpha > 0:
            raise ValueError("ons_alpha must be positive")
        if not 0 <= self.share_alpha <= 1:
            raise ValueError("share_alpha must lie in [0, 1]")
        if self.algorithm == "bandit" and self.tilt_mode == "plugin":
            raise ValueError("plugin tilt requires full-information feedback")


@dataclass(frozen=True, eq=False)
class LearnerState:
    """Point, round counter, optional curvature, and running loss."""

    point: SimplexPoint
    round: int = 0
    curvature: np.ndarray | None = None
    cumulative_loss: float = 0.0


def init_state(d: int, config: LearnerConfig | None = None) -> LearnerState:
    curvature = None
    if config is not None and config.algorithm == "ons":
        curvature = config.ons_alpha * np.eye(d)
    return LearnerState(SimplexPoint.uniform(d), 0, curvature, 0.0)


def default_eta(d: int, horizon: int) -> float:
    """Step size ``sqrt(log d / T)`` balancing entropy radius against noise."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    return math.sqrt(math.log(d) / horizon)


def bandit_defaults(d: int, horizon: int) -> tuple[float, float]:
    """(eta, exploration) tuning for the bandit variant."""
    eta = math.sqrt(math.log(d) / (d * horizon))
    gamma = min(1.0, math.sqrt(d * math.log(d) / horizon))
    return eta, gamma


def make_lambda_grid(horizon: int, lambda_max: float, points: int | None = None) -> tuple[float, ...]:
    """Geometric tilt grid on (0, lambda_max] plus the zero tilt.

    ``points`` defaults to ``ceil(log2 T)`` grid values; the smallest is
    ``lambda_max / 2**(points-1)``.  Zero is always included so a stationary
    world keeps one untilted instance.
    """
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    m = points if points is not None else max(1, math.ceil(math.log2(max(horizon, 2))))
    grid = [lambda_max / 2 ** (m - 1 - j) for j in range(m)]
    return (0.0, *grid)


def _stabilised_update(weights: np.ndarray, exponent: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(exponent)):
        raise ValueError("non-finite exponent in multiplicative update")
    z = exponent - exponent.max()
    w = weights * np.exp(z)
    total = w.sum()
    if not total > 0:
        raise ValueError("weights underflowed to zero in multiplicative update")
    return w / total


def tdmd_step(state: LearnerState, g, sigma, eta: float, lam: float) -> LearnerState:
    """One trust-decayed mirror-descent step.

    Returns the state holding ``x * exp(-eta * (g + lam * sigma))``
    renormalised; the proximal form (linearised loss plus KL to the current
    point) has this as its exact minimiser.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    gv = dual_values(g)
    sv = dual_values(sigma)
    d = state.point.dim
    if gv.size != d or sv.size != d:
        raise ValueError("dimension mismatch between state and feedback")
    w = _stabilised_update(state.point.weights, -eta * (gv + lam * sv))
    return replace(state, point=SimplexPoint(w), round=state.round + 1)


def tilted_posterior_step(prior: SimplexPoint, loss, sigma, eta: float, lam: float) -> SimplexPoint:
    """Tilted posterior reweighting ``P * exp(-eta * (loss + lam * sigma))``.

    Deliberately computed in log space as an independent code path from
    ``tdmd_step``; the two must agree coordinatewise (the belief/decision
    duality on the simplex), and tests hold them to that.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    lv = dual_values(loss)
    sv = dual_values(sigma)
    if lv.size != prior.dim or sv.size != prior.dim:
        raise ValueError("dimension mismatch between prior and feedback")
    clipped = np.maximum(prior.weights, CLIP_FLOOR)
    clipped = clipped / clipped.sum()
    z = np.log(clipped) - eta * (lv + lam * sv)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite exponent in posterior update")
    z -= z.max()
    p = np.exp(z)
    return SimplexPoint(p / p.sum())


def fixed_share_step(state: LearnerState, loss, eta: float, share_alpha: float) -> LearnerState:
    """Exponential-weights update followed by mixing with the uniform point."""
    if not 0 <= share_alpha <= 1:
        raise ValueError("share_alpha must lie in [0, 1]")
    lv = dual_values(loss)
    if lv.size != state.point.dim:
        raise ValueError("dimension mismatch between state and loss")
    w = _stabilised_update(state.point.weights, -eta * lv)
    mixed = (1.0 - share_alpha) * w + share_alpha / state.point.dim
    return replace(state, point=SimplexPoint(mixed), round=state.round + 1)


@dataclass(frozen=True, eq=False)
class MasterState:
    """Parallel learner instances plus exponential weights over them."""

    instance_states: tuple[LearnerState, ...]
    master_weights: SimplexPoint

    def __post_init__(self):
        if self.master_weights.dim != len(self.instance_states):
            raise ValueError("master weight dimension must match instance count")


def hedge_master_step(master: MasterState, instance_losses, eta_master: float) -> MasterState:
    """Reweight instances by ``exp(-eta_master * loss_j)`` and renormalise."""
    if eta_master <= 0:
        raise ValueError("eta_master must be positive")
    losses = np.asarray(instance_losses, dtype=float)
    if losses.ndim != 1 or losses.size != len(master.instance_states):
        raise ValueError("one loss per instance required")
    if not np.all(np.isfinite(losses)):
        raise ValueError("instance losses must be finite")
    w = _stabilised_update(master.master_weights.weights, -eta_master * losses)
    return MasterState(master.instance_states, SimplexPoint(w))


def master_prediction(master: MasterState) -> SimplexPoint:
    """Weight-averaged mixture of the instance points."""
    points = np.stack([s.point.weights for s in master.instance_states])
    return SimplexPoint(master.master_weights.weights @ points)


def tdons_step(state: LearnerState, g, sigma, eta: float, lam: float) -> LearnerState:
    """Second-order step: Newton-like move, Mahalanobis projection, rank-one
    curvature accumulation with the tilted gradient."""
    if state.curvature is None:
        raise ValueError("second-order step requires curvature state")
    H = state.curvature
    if np.linalg.eigvalsh(H)[0] <= PD_EIG_FLOOR:
        raise ValueError("curvature matrix lost positive definiteness")
    gv = dual_values(g)
    sv = dual_values(sigma)
    if gv.size != state.point.dim or sv.size != state.point.dim:
        raise ValueError("dimension mismatch between state and feedback")
    v = gv + lam * sv
    target = state.point.weights - eta * np.linalg.solve(H, v)
    point = project_simplex_mahalanobis(target, H, x0=state.point.weights)
    return LearnerState(point, state.round + 1, H + np.outer(v, v), state.cumulative_loss)


def sample_arm(point: SimplexPoint, exploration: float, rng: np.random.Generator) -> int:
    """Draw an arm from ``(1 - gamma) * x + gamma * uniform``."""
    if not 0 <= exploration <= 1:
        raise ValueError("exploration must lie in [0, 1]")
    probs = (1.0 - exploration) * point.weights + exploration / point.dim
    return int(rng.choice(point.dim, p=probs / probs.sum()))


def bandit_tdmd_step(
    state: LearnerState,
    chosen_arm: int,
    observed_loss: float,
    eta: float,
    lam: float,
    sigma,
    exploration: float,
) -> LearnerState:
    """Bandit step via the importance-weighted estimate of the loss vector.

    ``chosen_arm`` must come from sampling the exploration-mixed distribution
    of the current point (``sample_arm``); the estimate divides the observed
    loss by that arm's sampling probability, which makes it conditionally
    unbiased for the full loss vector.
    """
    if not 0 <= observed_loss <= 1:
        raise ValueError("observed loss must lie in [0, 1]")
    d = state.point.dim
    if not 0 <= chosen_arm < d:
        raise ValueError("chosen arm out of range")
    probs = (1.0 - exploration) * state.point.weights + exploration / d
    p_arm = float(probs[chosen_arm])
    if p_arm <= 0.0 or p_arm < exploration / d - 1e-12:
        raise ValueError(
            f"sampling contract violated: arm probability {p_arm} below exploration floor"
        )
    ghat = np.zeros(d)
    ghat[chosen_arm] = observed_loss / p_arm
    return tdmd_step(state, ghat, sigma, eta, lam)
