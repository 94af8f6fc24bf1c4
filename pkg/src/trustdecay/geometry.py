"""Simplex geometry: entropy potential, KL divergence, norms, and projections.

Conventions
-----------
Points on the probability simplex are wrapped in :class:`SimplexPoint`, an
immutable view of a 1-D float array that checks nonnegativity and unit sum on
construction.  All divergences use natural logarithms.  Before any logarithm
is taken, weights are clipped to at least ``CLIP_FLOOR`` and renormalised:
exponential updates never produce exact zeros analytically, but floating
point underflow can, and divergences must stay finite along algorithm
trajectories.

The KL divergence here is the Bregman divergence of the negative-entropy
potential ``psi(x) = sum_i x_i log x_i`` restricted to the simplex, which is
1-strongly convex with respect to the L1 norm.  Its dual norm is the max-abs
norm, used for all gradient/stress bounds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLIP_FLOOR = 1e-12
SUM_ATOL = 1e-9
PD_EIG_FLOOR = 1e-10


def _vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class SimplexPoint:
    """Probability vector over ``d >= 2`` coordinates.

    Weights must be nonnegative and sum to 1 within ``SUM_ATOL``.  The stored
    array is a read-only copy.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = _vector(self.weights)
        if w.size < 2:
            raise ValueError("simplex points need dimension >= 2")
        if not np.all(np.isfinite(w)):
            raise ValueError("simplex weights must be finite")
        if w.min() < -CLIP_FLOOR:
            raise ValueError(f"negative weight {w.min()} in simplex point")
        w = np.maximum(w, 0.0)
        total = w.sum()
        if abs(total - 1.0) > SUM_ATOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.size

    @staticmethod
    def uniform(d: int) -> "SimplexPoint":
        return SimplexPoint(np.full(d, 1.0 / d))

    @staticmethod
    def vertex(d: int, index: int) -> "SimplexPoint":
        w = np.zeros(d)
        w[index] = 1.0
        return SimplexPoint(w)


@dataclass(frozen=True, eq=False)
class DualVector:
    """A loss or stress vector with an optional max-abs-norm bound."""

    values: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        v = _vector(self.values)
        if not np.all(np.isfinite(v)):
            raise ValueError("dual vector entries must be finite")
        if self.bound is not None:
            if self.bound < 0:
                raise ValueError("dual-norm bound must be nonnegative")
            top = float(np.max(np.abs(v))) if v.size else 0.0
            if top > self.bound + 1e-12:
                raise ValueError(
                    f"max-abs entry {top} exceeds declared bound {self.bound}"
                )
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


def dual_values(v) -> np.ndarray:
    """Accept a DualVector or a plain array-like and return the raw vector."""
    if isinstance(v, DualVector):
        return v.values
    return _vector(v)


def _clipped(w: np.ndarray) -> np.ndarray:
    c = np.maximum(w, CLIP_FLOOR)
    return c / c.sum()


def _check_same_dim(p: SimplexPoint, q: SimplexPoint) -> None:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")


def kl_divergence(p: SimplexPoint, q: SimplexPoint) -> float:
    """KL divergence ``sum_i p_i log(p_i / q_i)`` on clipped weights.

    An exact zero in ``q`` where ``p`` carries mass is a structural violation
    of absolute continuity and raises; tiny positive weights are clipped to
    ``CLIP_FLOOR`` instead so trajectory divergences stay finite.
    """
    _check_same_dim(p, q)
    if np.any((q.weights == 0.0) & (p.weights > SUM_ATOL)):
        raise ValueError("absolute-continuity violation: q is zero where p has mass")
    pc = _clipped(p.weights)
    qc = _clipped(q.weights)
    return max(float(np.sum(pc * (np.log(pc) - np.log(qc)))), 0.0)


def neg_entropy(p: SimplexPoint) -> float:
    """Negative entropy ``sum_i p_i log p_i``; ranges over [-log d, 0]."""
    pc = _clipped(p.weights)
    return float(np.sum(pc * np.log(pc)))


def tv_distance(p: SimplexPoint, q: SimplexPoint) -> float:
    """Total-variation distance ``0.5 * sum_i |p_i - q_i|``."""
    _check_same_dim(p, q)
    return 0.5 * float(np.sum(np.abs(p.weights - q.weights)))


def pinsker_bound(epsilon: float) -> float:
    """Upper bound ``sqrt(epsilon / 2)`` on TV distance at KL radius epsilon."""
    if epsilon < 0:
        raise ValueError("KL radius must be nonnegative")
    return float(np.sqrt(epsilon / 2.0))


def softmax(logits) -> np.ndarray:
    """Stable softmax of a 1-D logit vector."""
    z = _vector(logits)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the simplex (sort-based, non-iterative)."""
    v = _vector(v)
    n = v.size
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    cond = u - cssv / ind > 0
    if not np.any(cond):
        raise ValueError("degenerate projection input")
    rho = ind[cond][-1]
    theta = cssv[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def project_simplex_mahalanobis(
    y,
    H,
    x0=None,
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> SimplexPoint:
    """Projection ``argmin_x (x - y)^T H (x - y)`` over the simplex.

    Solved by projected gradient descent with the fixed step ``1/lambda_max``
    applied to the half-gradient ``H (x - y)``, stopping once the iterate
    displacement drops below ``tol`` (max-abs).  ``x0`` warm-starts the
    iteration; callers projecting a slowly moving target should pass the
    previous solution.
    """
    y = _vector(y)
    if not np.all(np.isfinite(y)):
        raise ValueError("projection target must be finite")
    H = np.asarray(H, dtype=float)
    if H.shape != (y.size, y.size):
        raise ValueError(f"metric shape {H.shape} does not match vector size {y.size}")
    if np.max(np.abs(H - H.T)) > 1e-8 * max(1.0, np.max(np.abs(H))):
        raise ValueError("metric must be symmetric")
    eigs = np.linalg.eigvalsh(H)
    if eigs[0] <= PD_EIG_FLOOR:
        raise ValueError(f"metric is not positive definite (min eigenvalue {eigs[0]})")
    step = 1.0 / eigs[-1]

    if x0 is None:
        x = project_simplex(y)
    else:
        x = _vector(x0.weights if isinstance(x0, SimplexPoint) else x0).copy()
    residual = np.inf
    for _ in range(max_iter):
        x_new = project_simplex(x - step * (H @ (x - y)))
        residual = float(np.max(np.abs(x_new - x)))
        x = x_new
        if residual <= tol:
            return SimplexPoint(x)
    raise RuntimeError(
        f"simplex projection did not converge within {max_iter} iterations "
        f"(last residual {residual:.3e})"
    )
