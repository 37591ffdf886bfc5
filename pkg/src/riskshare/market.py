"""Indirect-utility schedules, tie-breaking, market segmentation and firm income.

An indirect utility ``v`` is stored through ``w = sqrt(-v')``::

    w(theta) = tail_slope + integral_theta^1 alpha(s) ds

with ``alpha >= 0`` piecewise constant on the type grid.  Every such ``w`` is
nonnegative and nonincreasing, so ``v(theta) = integral_theta^1 w(s)^2 ds`` is
convex, nonincreasing, nonnegative and vanishes at ``theta = 1``.

``w`` is linear in the parameter vector ``p = (tail_slope, alpha_0, ...)`` and
``v`` is a quadratic form in ``p``.  :class:`ScheduleBasis` precomputes both
maps exactly (two-point Gauss rules are exact for the quadratic integrands).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from riskshare.probability import Claim, DimensionError, TypeGrid, variance
from riskshare.validation import as_vector, check_nonnegative, check_scalar, check_unit_interval

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class ScheduleBasis:
    """Linear and quadratic maps from schedule parameters to ``w`` and ``v``."""

    def __init__(self, grid: TypeGrid):
        self.grid = grid
        n, h = grid.n, grid.width
        edges = grid.edges
        self.phi_mid = np.stack([self.phi(m) for m in grid.midpoints])
        cell_gram = np.stack([self._piece_gram(edges[j], edges[j + 1]) for j in range(n)])
        suffix = np.zeros((n + 1, n + 1, n + 1))
        for j in range(n - 1, -1, -1):
            suffix[j] = suffix[j + 1] + cell_gram[j]
        self._suffix = suffix
        # gram_mid[k] = integral over [m_k, 1] of phi phi^T
        self.gram_mid = np.stack(
            [suffix[k + 1] + self._piece_gram(grid.midpoints[k], edges[k + 1]) for k in range(n)]
        )
        self.h = h

    def phi(self, s: float) -> np.ndarray:
        """Row vector with ``w(s) = phi(s) @ p``."""
        g = self.grid
        k = g.cell_of(s)
        out = np.zeros(g.n + 1)
        out[0] = 1.0
        out[1 + k] = g.edges[k + 1] - s
        out[2 + k:] = g.width
        return out

    def _piece_gram(self, lo, hi):
        if hi <= lo:
            return np.zeros((self.grid.n + 1, self.grid.n + 1))
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        rows = [self.phi(mid + half * t) for t in _GAUSS]
        return half * sum(np.outer(r, r) for r in rows)

    def gram_from(self, theta: float) -> np.ndarray:
        """``integral_theta^1 phi phi^T``, so that ``v(theta) = p @ G @ p``."""
        k = self.grid.cell_of(theta)
        return self._suffix[k + 1] + self._piece_gram(theta, self.grid.edges[k + 1])

    def income_blocks(self) -> np.ndarray:
        """Per-cell matrices ``B_k`` with ``-(m_k v'(m_k) - v(m_k)) mu_k = p @ B_k @ p``."""
        g = self.grid
        outer = np.einsum("ki,kj->kij", self.phi_mid, self.phi_mid)
        return g.cell_weights[:, None, None] * (g.midpoints[:, None, None] * outer + self.gram_mid)


@lru_cache(maxsize=64)
def basis_for(grid: TypeGrid) -> ScheduleBasis:
    return ScheduleBasis(grid)


@dataclass(frozen=True)
class VProfile:
    """Cell-midpoint values of ``v``, ``v'`` and ``sqrt(-v')``."""

    v: np.ndarray
    dv: np.ndarray
    root: np.ndarray


@dataclass(frozen=True, eq=False)
class UtilitySchedule:
    """Convex, nonincreasing, nonnegative indirect utility on a type grid.

    Parameters
    ----------
    alpha : array of shape (n,)
        Per-cell value of ``-d/dtheta sqrt(-v'(theta))``; nonnegative.
    tail_slope : float
        ``sqrt(-v'(1))``; nonnegative.
    grid : TypeGrid
    """

    alpha: np.ndarray
    tail_slope: float
    grid: TypeGrid

    def __post_init__(self):
        alpha = check_nonnegative(self.alpha, "alpha")
        if alpha.size != self.grid.n:
            raise DimensionError(f"alpha has {alpha.size} entries for a {self.grid.n}-cell grid")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "tail_slope", check_scalar(self.tail_slope, "tail_slope", lo=0))

    @classmethod
    def zero(cls, grid: TypeGrid) -> UtilitySchedule:
        return cls(np.zeros(grid.n), 0.0, grid)

    @classmethod
    def from_flat(cls, params, grid: TypeGrid) -> UtilitySchedule:
        params = as_vector(params, "params")
        return cls(params[1:], params[0], grid)

    def to_flat(self) -> np.ndarray:
        return np.concatenate(([self.tail_slope], self.alpha))

    def root_slope(self, theta: float) -> float:
        return float(basis_for(self.grid).phi(theta) @ self.to_flat())

    def derivative(self, theta: float) -> float:
        return -self.root_slope(theta) ** 2

    def value(self, theta: float) -> float:
        p = self.to_flat()
        return float(p @ basis_for(self.grid).gram_from(theta) @ p)

    @property
    def k_bound(self) -> float:
        """``v(a) - v(1) = v(a)``, the squared-norm budget of incentive-compatible claims."""
        return self.value(self.grid.a)


def reconstruct_v(schedule: UtilitySchedule) -> VProfile:
    """Evaluate ``v``, ``v'`` and ``sqrt(-v')`` at the cell midpoints."""
    basis = basis_for(schedule.grid)
    p = schedule.to_flat()
    root = basis.phi_mid @ p
    v = np.einsum("i,kij,j->k", p, basis.gram_mid, p)
    return VProfile(v=v, dv=-(root**2), root=root)


def price_schedule(schedule: UtilitySchedule) -> np.ndarray:
    """Per-cell prices ``theta v'(theta) - v(theta)`` at the midpoints."""
    prof = reconstruct_v(schedule)
    return schedule.grid.midpoints * prof.dv - prof.v


def firm_income(schedule: UtilitySchedule, share) -> float:
    """Income ``sum_k (theta_k v'_k - v_k) share_k mu_k``; nonpositive by construction."""
    share = check_unit_interval(share, "share")
    grid = schedule.grid
    if share.size != grid.n:
        raise DimensionError(f"share has {share.size} entries for a {grid.n}-cell grid")
    return float(np.sum(price_schedule(schedule) * share * grid.cell_weights))


@dataclass(frozen=True, eq=False)
class TieBreakRule:
    """Firm 1's share of each type cell; firm 2 receives the complement."""

    weights: np.ndarray

    def __post_init__(self):
        w = check_unit_interval(self.weights, "tie-break weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def constant(cls, value: float, n: int) -> TieBreakRule:
        return cls(np.full(n, float(value)))

    @property
    def firm1(self) -> np.ndarray:
        return self.weights

    @property
    def firm2(self) -> np.ndarray:
        return 1.0 - self.weights


@dataclass(frozen=True)
class MarketSegmentation:
    theta1: np.ndarray
    theta2: np.ndarray
    theta0: np.ndarray
    shift_points: list

    def shares(self, tbr: TieBreakRule | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell shares ``(f_1, f_2)``: full on own segment, TBR on ties."""
        f = tbr.weights if isinstance(tbr, TieBreakRule) else np.asarray(tbr, dtype=float)
        s1 = np.zeros(f.size)
        s1[self.theta1] = 1.0
        s1[self.theta0] = f[self.theta0]
        return s1, 1.0 - s1


def default_tie_tolerance(v1: np.ndarray, v2: np.ndarray) -> float:
    return 1e-9 * (1.0 + np.max(np.abs(v1)) + np.max(np.abs(v2)))


def segment_market(v1: UtilitySchedule, v2: UtilitySchedule, tol: float | None = None) -> MarketSegmentation:
    """Split the grid by the sign of ``v1 - v2`` at cell midpoints."""
    if v1.grid != v2.grid:
        raise DimensionError("schedules live on different type grids")
    return segment_values(reconstruct_v(v1).v, reconstruct_v(v2).v, v1.grid, tol)


def segment_values(val1, val2, grid: TypeGrid, tol=None) -> MarketSegmentation:
    if tol is None:
        tol = default_tie_tolerance(val1, val2)
    diff = val1 - val2
    sign = np.where(diff > tol, 1, np.where(diff < -tol, -1, 0))
    shifts = [float(grid.edges[k + 1]) for k in range(grid.n - 1) if sign[k] * sign[k + 1] < 0]
    return MarketSegmentation(
        theta1=np.flatnonzero(sign > 0),
        theta2=np.flatnonzero(sign < 0),
        theta0=np.flatnonzero(sign == 0),
        shift_points=shifts,
    )


def envelope_profile(v1: UtilitySchedule, v2: UtilitySchedule) -> VProfile:
    """Cellwise profile of the upper envelope ``max(v1, v2)``."""
    p1, p2 = reconstruct_v(v1), reconstruct_v(v2)
    pick = p1.v >= p2.v
    return VProfile(
        v=np.where(pick, p1.v, p2.v),
        dv=np.where(pick, p1.dv, p2.dv),
        root=np.where(pick, p1.root, p2.root),
    )


@dataclass(frozen=True)
class EnvelopeReport:
    residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residuals)) if self.residuals.size else 0.0


def envelope_check(schedule: UtilitySchedule, contracts) -> EnvelopeReport:
    """Residual of the envelope identity ``v'(theta) = -Var[X(theta)]`` per cell."""
    contracts = list(contracts)
    if len(contracts) != schedule.grid.n:
        raise DimensionError(f"{len(contracts)} contracts for a {schedule.grid.n}-cell grid")
    dv = reconstruct_v(schedule).dv
    var = np.array([variance(c) for c in contracts])
    return EnvelopeReport(np.abs(dv + var))


def incentive_compatible_contracts(schedule: UtilitySchedule, z: Claim) -> list[Claim]:
    """Collinear contracts ``sqrt(-v'(theta_k)) Z`` for each cell."""
    root = reconstruct_v(schedule).root
    return [z * r for r in root]
