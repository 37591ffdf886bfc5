"""Aggregate risk assessment of the two firms for a given decision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from riskshare.market import TieBreakRule, UtilitySchedule, basis_for, segment_values
from riskshare.probability import Claim, DimensionError, ProbSpace, TypeGrid
from riskshare.risk import RiskMeasure

FEAS_TOL = 1e-10


@dataclass(frozen=True)
class FirmSpec:
    """A firm's initial risky endowment and the risk measure it uses."""

    endowment: Claim
    risk: RiskMeasure

    @property
    def initial_risk(self) -> float:
        return self.risk.value(self.endowment.payoffs, self.endowment.space.atom_weights)


@dataclass(eq=False)
class DecisionVector:
    """Full optimizer state.

    ``alpha`` and ``tail`` hold one schedule per firm (rows); in shared
    mode both rows carry the same schedule.  ``beta`` holds the normalized
    claims ``Z_i`` (mean zero, second moment at most one) and ``tbr`` firm
    1's share of each type cell.
    """

    alpha: np.ndarray
    tail: np.ndarray
    beta: np.ndarray
    tbr: np.ndarray

    def __post_init__(self):
        self.alpha = np.array(self.alpha, dtype=float).reshape(2, -1)
        self.tail = np.array(self.tail, dtype=float).reshape(2)
        self.beta = np.array(self.beta, dtype=float).reshape(2, -1)
        self.tbr = np.array(self.tbr, dtype=float).reshape(-1)
        if self.tbr.size != self.alpha.shape[1]:
            raise DimensionError("tbr and alpha disagree on the number of type cells")

    @classmethod
    def zeros(cls, n: int, d: int, tbr: float = 0.5) -> DecisionVector:
        return cls(np.zeros((2, n)), np.zeros(2), np.zeros((2, d)), np.full(n, float(tbr)))

    @property
    def n(self) -> int:
        return self.tbr.size

    @property
    def d(self) -> int:
        return self.beta.shape[1]

    def copy(self) -> DecisionVector:
        return DecisionVector(self.alpha.copy(), self.tail.copy(), self.beta.copy(), self.tbr.copy())

    def schedule(self, i: int, grid: TypeGrid) -> UtilitySchedule:
        return UtilitySchedule(np.maximum(self.alpha[i], 0.0), max(self.tail[i], 0.0), grid)

    def tie_break(self) -> TieBreakRule:
        return TieBreakRule(np.clip(self.tbr, 0.0, 1.0))

    def claim(self, i: int, space: ProbSpace) -> Claim:
        return Claim(self.beta[i], space)

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.alpha.ravel(), self.tail, self.beta.ravel(), self.tbr])

    @classmethod
    def from_flat(cls, flat, n: int, d: int) -> DecisionVector:
        flat = np.asarray(flat, dtype=float)
        if flat.size != 2 * n + 2 + 2 * d + n:
            raise DimensionError(f"flat decision of size {flat.size} does not match n={n}, d={d}")
        i = 2 * n
        return cls(flat[:i], flat[i:i + 2], flat[i + 2:i + 2 + 2 * d], flat[i + 2 + 2 * d:])

    def violations(self, weights: np.ndarray, tol: float = FEAS_TOL) -> list[str]:
        """Names of violated box and moment constraints (empty when feasible)."""
        out = []
        if np.any(self.alpha < -tol):
            out.append("alpha >= 0")
        if np.any(self.tail < -tol):
            out.append("tail >= 0")
        if np.any(self.tbr < -tol) or np.any(self.tbr > 1 + tol):
            out.append("0 <= tbr <= 1")
        for i in range(2):
            if abs(weights @ self.beta[i]) > tol:
                out.append(f"E[Z_{i + 1}] = 0")
            if weights @ self.beta[i] ** 2 > 1 + tol:
                out.append(f"E[Z_{i + 1}^2] <= 1")
        return out


@dataclass(frozen=True)
class Assessment:
    """Per-firm risk ``R_i``, income ``I_i`` and assessment ``A_i = R_i - I_i``."""

    risk: np.ndarray
    income: np.ndarray
    aggregators: np.ndarray
    shares: np.ndarray

    @property
    def assessment(self) -> np.ndarray:
        return self.risk - self.income

    @property
    def aggregate(self) -> float:
        return float(self.assessment.sum())


class Problem:
    """Compiled planner objective with analytic block gradients.

    The objective is ``sum_i rho_i(W_i - a_i Z_i) - I_i`` where the
    aggregator ``a_i = sum_k sqrt(-v_i'(theta_k)) f_i(theta_k) mu_k`` and the
    income ``I_i`` is a quadratic form in firm ``i``'s schedule parameters.
    """

    def __init__(self, firms, grid: TypeGrid, shared: bool = True):
        firms = tuple(firms)
        if len(firms) != 2:
            raise ValueError("the planner works with exactly two firms")
        space = firms[0].endowment.space
        if firms[1].endowment.space.atom_count != space.atom_count:
            raise DimensionError("firm endowments live on spaces of different dimension")
        self.firms = firms
        self.grid = grid
        self.space = space
        self.shared = shared
        self.w = space.atom_weights
        basis = basis_for(grid)
        self.phi = basis.phi_mid
        self.blocks = basis.income_blocks()
        self.mu = grid.cell_weights
        self.initial = np.array([f.initial_risk for f in firms])

    def params(self, x: DecisionVector, i: int) -> np.ndarray:
        return np.concatenate(([x.tail[i]], x.alpha[i]))

    def shares(self, x: DecisionVector) -> np.ndarray:
        f = np.clip(x.tbr, 0.0, 1.0)
        if self.shared:
            s1 = f
        else:
            p1, p2 = self.params(x, 0), self.params(x, 1)
            v1 = np.einsum("i,kij,j->k", p1, basis_for(self.grid).gram_mid, p1)
            v2 = np.einsum("i,kij,j->k", p2, basis_for(self.grid).gram_mid, p2)
            s1, _ = segment_values(v1, v2, self.grid).shares(f)
        return np.stack([s1, 1.0 - s1])

    def evaluate(self, x: DecisionVector) -> Assessment:
        shares = self.shares(x)
        risk, income, agg = np.empty(2), np.empty(2), np.empty(2)
        for i, firm in enumerate(self.firms):
            p = self.params(x, i)
            root = self.phi @ p
            agg[i] = np.sum(root * shares[i] * self.mu)
            position = firm.endowment.payoffs - agg[i] * x.beta[i]
            risk[i] = firm.risk.value(position, self.w)
            income[i] = -np.einsum("k,i,kij,j->", shares[i], p, self.blocks, p)
        return Assessment(risk, income, agg, shares)

    def aggregate(self, x: DecisionVector) -> float:
        return self.evaluate(x).aggregate

    def gradients(self, x: DecisionVector):
        """Gradients of each firm's assessment ``A_i``, keyed by variable group.

        Returns ``(assessment, grads)`` where ``grads[i]`` maps ``"params"``
        (tail then alpha of firm ``i``'s own schedule), ``"beta"`` and
        ``"shares"`` to the partial derivatives of ``A_i``.  The pieces are also
        returned separately: ``"agg_params"`` and ``"agg_shares"`` are the
        derivatives of the aggregator ``a_i``, ``"income_params"`` and
        ``"income_shares"`` those of ``-I_i``, and ``"risk"`` is the gradient
        of ``rho_i`` at the position.  The segmentation
        is held fixed, so in two-schedule mode these are one-sided
        derivatives away from segment boundaries.
        """
        ev = self.evaluate(x)
        grads = []
        for i, firm in enumerate(self.firms):
            p = self.params(x, i)
            s = ev.shares[i]
            position = firm.endowment.payoffs - ev.aggregators[i] * x.beta[i]
            g = firm.risk.gradient(position, self.w)
            d_agg = -(g @ x.beta[i])
            weighted = np.einsum("k,kij->ij", s, self.blocks)
            agg_params = self.phi.T @ (s * self.mu)
            agg_shares = (self.phi @ p) * self.mu
            income_params = 2.0 * weighted @ p
            income_shares = np.einsum("i,kij,j->k", p, self.blocks, p)
            grads.append({
                "params": d_agg * agg_params + income_params,
                "beta": -ev.aggregators[i] * g,
                "shares": d_agg * agg_shares + income_shares,
                "agg_params": agg_params,
                "agg_shares": agg_shares,
                "income_params": income_params,
                "income_shares": income_shares,
                "risk": g,
            })
        return ev, grads


def assemble_objective(firms, decision: DecisionVector, grid: TypeGrid, shared: bool = True) -> Assessment:
    """Evaluate ``R_i``, ``I_i`` and the aggregate for ``decision``."""
    problem = Problem(firms, grid, shared=shared)
    bad = decision.violations(problem.w)
    if bad:
        raise ValueError(f"decision violates its constraints: {', '.join(bad)}")
    if shared and not (np.allclose(decision.alpha[0], decision.alpha[1]) and decision.tail[0] == decision.tail[1]):
        raise ValueError("shared mode requires identical schedules for both firms")
    return problem.evaluate(decision)
