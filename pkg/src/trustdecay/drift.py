"""KL drift: path lengths, tilt schedules, plug-in estimation, calibration.

A drift schedule is a 1-D array of nonnegative per-round divergences
``eps_t`` between consecutive environment distributions; the associated path
length ``sum_t sqrt(eps_t / 2)`` is the variation budget used throughout the
package.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import SimplexPoint, dual_values
from .seeding import generator, split_seed

VAR_FLOOR = 1e-6
COEF_LIMIT = 1e6


def _epsilons(schedule) -> np.ndarray:
    eps = np.asarray(schedule, dtype=float)
    if eps.ndim != 1:
        raise ValueError("drift schedule must be a 1-D array")
    if eps.size and eps.min() < 0:
        raise ValueError("drift entries must be nonnegative")
    return eps


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean vector and (fixed) covariance of a Gaussian observation model."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean")
        if np.max(np.abs(cov - cov.T)) > 1e-10 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov)[0] <= 1e-10:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)


def gaussian_kl(p1: GaussianParams, p2: GaussianParams) -> float:
    """KL divergence between Gaussians sharing one covariance.

    Returns ``0.5 * d^T Sigma^-1 d`` for the mean difference ``d``.  Only the
    equal-covariance case is supported here; use ``gaussian_kl_general`` when
    covariances differ.
    """
    if p1.mean.size != p2.mean.size:
        raise ValueError("mean dimension mismatch")
    if np.max(np.abs(p1.covariance - p2.covariance)) > 1e-12:
        raise ValueError("fixed-covariance case only: covariances differ")
    delta = p1.mean - p2.mean
    return 0.5 * float(delta @ np.linalg.solve(p1.covariance, delta))


def gaussian_kl_general(mean_p, cov_p, mean_q, cov_q) -> float:
    """KL( N(mean_p, cov_p) || N(mean_q, cov_q) ), general closed form."""
    mp = np.atleast_1d(np.asarray(mean_p, dtype=float))
    mq = np.atleast_1d(np.asarray(mean_q, dtype=float))
    cp = np.atleast_2d(np.asarray(cov_p, dtype=float))
    cq = np.atleast_2d(np.asarray(cov_q, dtype=float))
    k = mp.size
    if mq.size != k or cp.shape != (k, k) or cq.shape != (k, k):
        raise ValueError("dimension mismatch")
    for c in (cp, cq):
        if np.linalg.eigvalsh(c)[0] <= 1e-10:
            raise ValueError("covariances must be positive definite")
    delta = mq - mp
    solved = np.linalg.solve(cq, cp)
    _, logdet_q = np.linalg.slogdet(cq)
    _, logdet_p = np.linalg.slogdet(cp)
    quad = float(delta @ np.linalg.solve(cq, delta))
    return 0.5 * (float(np.trace(solved)) - k + quad + logdet_q - logdet_p)


def kl_path_length(schedule) -> float:
    """Cumulative variation budget ``sum_t sqrt(eps_t / 2)``."""
    eps = _epsilons(schedule)
    return float(np.sum(np.sqrt(eps / 2.0)))


def lambda_schedule(epsilon_t: float, kappa: float) -> float:
    """Tilt intensity ``kappa * sqrt(eps)`` for one round of measured drift."""
    if epsilon_t < 0:
        raise ValueError("drift must be nonnegative")
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    return kappa * float(np.sqrt(epsilon_t))


def plugin_drift_estimate(samples_prev, samples_curr, var_floor: float = VAR_FLOOR) -> float:
    """Gaussian plug-in drift estimate from two observation windows.

    Fits window means and a pooled diagonal covariance (variance-floored at
    ``var_floor``) and returns the fixed-covariance Gaussian KL between the
    fitted models.  Windows must contain at least two observations each.
    """
    prev = np.atleast_2d(np.asarray(samples_prev, dtype=float))
    curr = np.atleast_2d(np.asarray(samples_curr, dtype=float))
    if prev.shape[0] < 2 or curr.shape[0] < 2:
        raise ValueError("plug-in estimation needs windows of length >= 2")
    if prev.shape[1] != curr.shape[1]:
        raise ValueError("observation dimension mismatch")
    n1, n2 = prev.shape[0], curr.shape[0]
    mu_prev = prev.mean(axis=0)
    mu_curr = curr.mean(axis=0)
    pooled = ((n1 - 1) * prev.var(axis=0, ddof=1) + (n2 - 1) * curr.var(axis=0, ddof=1)) / (
        n1 + n2 - 2
    )
    pooled = np.maximum(pooled, var_floor)
    delta = mu_curr - mu_prev
    return 0.5 * float(np.sum(delta * delta / pooled))


@dataclass(frozen=True)
class CalibrationFit:
    """Fitted stress-calibration coefficients.

    ``a`` scales the stress inner product, ``b`` scales the per-round drift
    term.  ``max_violation <= 0`` means the calibration inequality holds on
    the probe grid at the fitted coefficients.
    """

    a: float
    b: float
    max_violation: float


def _probe_grid(d: int, n_random: int, seed: int) -> np.ndarray:
    probes = [np.eye(d)[i] for i in range(d)]
    rng = generator(split_seed(seed, "calibration-probes", 0))
    for _ in range(n_random):
        probes.append(rng.dirichlet(np.ones(d)))
    return np.asarray(probes)


def calibration_fit(
    rounds,
    stress=None,
    n_probes: int = 50,
    seed: int = 0,
    limit: float = COEF_LIMIT,
) -> CalibrationFit:
    """Fit nonnegative (a, b) covering loss changes by stress plus drift.

    For every consecutive round pair and probe point ``x`` the constraint is

        |f_t(x) - f_{t-1}(x)|  <=  a * <sigma_t, x>  +  b * sqrt(eps_t / 2)

    with ``f_t`` evaluated linearly from the round's expected vertex losses.
    The two-variable program minimising ``a + b`` is solved by a dense grid
    over ``a`` (each ``a`` determines the least feasible ``b``), refined
    twice around the incumbent.  When no (a, b) within ``limit`` is feasible
    the best-effort fit is returned with a positive ``max_violation``.
    """
    rounds = list(rounds)
    if len(rounds) < 2:
        return CalibrationFit(0.0, 0.0, 0.0)
    d = rounds[0].expected_loss.size
    probes = _probe_grid(d, n_probes, seed)

    deltas = []
    stress_terms = []
    drift_terms = []
    for i in range(1, len(rounds)):
        prev, curr = rounds[i - 1], rounds[i]
        sigma = curr.stress if stress is None else dual_values(stress[i])
        gap = np.abs(probes @ (curr.expected_loss - prev.expected_loss))
        deltas.append(gap)
        stress_terms.append(probes @ sigma)
        drift_terms.append(np.full(probes.shape[0], np.sqrt(max(curr.epsilon_true, 0.0) / 2.0)))
    delta = np.concatenate(deltas)
    s_term = np.concatenate(stress_terms)
    c_term = np.concatenate(drift_terms)

    # Constraints with an exactly-zero drift coefficient must be covered by
    # the stress term alone; b cannot help there.
    def least_b(a: float) -> float:
        slack = delta - a * s_term
        needed = 0.0
        hard = c_term <= 1e-15
        if np.any(slack[hard] > 1e-12):
            return np.inf
        soft = ~hard
        if np.any(soft):
            needed = float(np.max(slack[soft] / c_term[soft], initial=0.0))
        return min(max(needed, 0.0), np.inf)

    positive_s = s_term > 1e-12
    a_cap = limit
    if np.any(positive_s):
        a_cap = min(limit, max(1.0, 2.0 * float(np.max(delta / np.maximum(s_term, 1e-12)))))
    else:
        a_cap = 0.0

    def search(lo: float, hi: float, points: int = 101):
        best = (np.inf, 0.0, np.inf)  # objective, a, b
        for a in np.linspace(lo, hi, points):
            b = least_b(float(a))
            if b > limit:
                continue
            obj = a + b
            if obj < best[0]:
                best = (obj, float(a), float(b))
        return best

    best = search(0.0, a_cap)
    if np.isfinite(best[0]):
        width = max(a_cap / 100.0, 1e-9)
        for _ in range(2):
            lo = max(0.0, best[1] - width)
            hi = min(a_cap if a_cap > 0 else width, best[1] + width)
            refined = search(lo, hi if hi > lo else lo + 1e-9)
            if refined[0] < best[0]:
                best = refined
            width /= 50.0
        a_star, b_star = best[1], best[2]
    else:
        # Infeasible within the limit: report the least-violating corner.
        a_star = min(a_cap, limit)
        b_star = min(float(np.max(delta / np.maximum(c_term, 1e-15), initial=0.0)), limit)
    violation = float(np.max(delta - a_star * s_term - b_star * c_term, initial=0.0))
    if np.isfinite(best[0]) and violation <= 1e-9:
        violation = min(violation, 0.0)
    return CalibrationFit(a_star, b_star, violation)
