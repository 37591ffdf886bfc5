"""Hybrid block-coordinate descent for the social planner's program.

Each block of the decision (schedule slopes, tail slope, the two claims and
the tie-break rule) is updated in turn.  A block step linearizes the
aggregate objective and the active constraints at the current point,
minimizes the linear model over a cube around it, repairs feasibility along
the violated constraint's negative gradient, and accepts the point only if
the aggregate decreases.  Rejected steps halve that block's cube.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from riskshare.market import basis_for, segment_values
from riskshare.planner.lp import InfeasibleStep, LinearConstraint, TailTerm, feasibility_repair, lp_trust_region
from riskshare.planner.objective import FEAS_TOL, DecisionVector, FirmSpec, Problem
from riskshare.probability import TypeGrid

log = logging.getLogger(__name__)

DEFAULT_ORDER = ("alpha", "tail", "beta1", "beta2", "tbr")
IR_TOL = 1e-12


@dataclass
class PlannerResult:
    decision: DecisionVector
    risk: np.ndarray
    income: np.ndarray
    assessment: np.ndarray
    aggregate: float
    aggregators: np.ndarray
    initial_risk: np.ndarray
    ir_satisfied: np.ndarray
    iterations: int
    trace: list
    converged: bool
    shared: bool
    grid: TypeGrid
    firms: tuple
    fix_mix_K: float | None = None
    notes: list = field(default_factory=list)

    @property
    def initial_aggregate(self) -> float:
        return float(self.initial_risk.sum())

    def summary(self) -> dict:
        return {
            "initial_risk": self.initial_risk.tolist(),
            "initial_aggregate": self.initial_aggregate,
            "risk": self.risk.tolist(),
            "income": self.income.tolist(),
            "assessment": self.assessment.tolist(),
            "aggregate": self.aggregate,
            "aggregators": self.aggregators.tolist(),
            "fix_mix_K": self.fix_mix_K,
            "ir_satisfied": [bool(b) for b in self.ir_satisfied],
            "iterations": self.iterations,
            "converged": self.converged,
        }


class _Block:
    """A group of decision variables updated together."""

    def __init__(self, name, problem: Problem, enforce_ir: bool):
        self.name = name
        self.problem = problem
        self.enforce_ir = enforce_ir

    # subclasses define get/set/box/firm_grads/extra constraints
    def linear_constraints(self, x, xb):
        return []

    def constraint_checks(self, x):
        """List of (violation, gradient-in-block) pairs at ``x``."""
        return []

    def relevant(self, x) -> bool:
        return True


class _ScheduleBlock(_Block):
    def __init__(self, name, problem, enforce_ir, firms, part):
        super().__init__(name, problem, enforce_ir)
        self.firms = firms  # which schedule rows this block writes
        self.part = part  # "alpha" or "tail"

    def _slice(self):
        return slice(1, None) if self.part == "alpha" else slice(0, 1)

    def get(self, x):
        if self.part == "alpha":
            return np.concatenate([x.alpha[i] for i in self.firms])
        return x.tail[list(self.firms)].copy()

    def set(self, x, values):
        y = x.copy()
        if self.problem.shared:
            if self.part == "alpha":
                y.alpha[:] = values
            else:
                y.tail[:] = values[0]
        elif self.part == "alpha":
            y.alpha[self.firms[0]] = values
        else:
            y.tail[list(self.firms)] = values
        return y

    def box(self, size):
        return np.zeros(size), np.full(size, np.inf)

    def firm_grads(self, grads):
        """Gradient of each firm's assessment with respect to this block."""
        sl = self._slice()
        out = []
        for i in range(2):
            parts = []
            for j in self.firms:
                if self.problem.shared or j == i:
                    parts.append(grads[i]["params"][sl])
                else:
                    parts.append(np.zeros_like(grads[i]["params"][sl]))
            out.append(np.concatenate(parts))
        return out

    def split(self, ev, grads, x, i):
        """Jacobian of firm ``i``'s position and gradient of ``-I_i`` in this block."""
        sl = self._slice()
        jac, smooth = [], []
        for j in self.firms:
            agg = grads[i]["agg_params"][sl]
            if self.problem.shared or j == i:
                jac.append(-np.outer(x.beta[i], agg))
                smooth.append(grads[i]["income_params"][sl])
            else:
                jac.append(np.zeros((x.d, agg.size)))
                smooth.append(np.zeros(agg.size))
        return np.hstack(jac), np.concatenate(smooth)


class _BetaBlock(_Block):
    def __init__(self, name, problem, enforce_ir, firm):
        super().__init__(name, problem, enforce_ir)
        self.firm = firm

    def get(self, x):
        return x.beta[self.firm].copy()

    def set(self, x, values):
        y = x.copy()
        y.beta[self.firm] = values
        return y

    def box(self, size):
        return np.full(size, -np.inf), np.full(size, np.inf)

    def firm_grads(self, grads):
        out = [np.zeros_like(grads[self.firm]["beta"]) for _ in range(2)]
        out[self.firm] = grads[self.firm]["beta"]
        return out

    def split(self, ev, grads, x, i):
        d = x.d
        scale = ev.aggregators[i] if i == self.firm else 0.0
        return -scale * np.eye(d), np.zeros(d)

    def linear_constraints(self, x, xb):
        w = self.problem.w
        # E[(b + d)^2] <= 1 linearized at b: 2 E[b y] <= 1 + E[b^2]
        return [
            LinearConstraint(w, 0.0, equality=True),
            LinearConstraint(2.0 * w * xb, 1.0 + float(w @ xb**2)),
        ]

    def _project(self, direction):
        w = self.problem.w
        return direction - (w @ direction) / (w @ w) * w

    def constraint_checks(self, x):
        w = self.problem.w
        b = x.beta[self.firm]
        return [(float(w @ b**2) - 1.0, self._project(2.0 * w * b))]

    def relevant(self, x):
        return self.problem.evaluate(x).aggregators[self.firm] > 0


class _TbrBlock(_Block):
    def get(self, x):
        return x.tbr.copy()

    def set(self, x, values):
        y = x.copy()
        y.tbr = values.copy()
        return y

    def box(self, size):
        return np.zeros(size), np.ones(size)

    def firm_grads(self, grads):
        return [grads[0]["shares"], -grads[1]["shares"]]

    def split(self, ev, grads, x, i):
        sign = 1.0 if i == 0 else -1.0
        return -sign * np.outer(x.beta[i], grads[i]["agg_shares"]), sign * grads[i]["income_shares"]

    def _ties(self, x):
        """Cells where the TBR matters: all of them in shared mode, ties otherwise."""
        if self.problem.shared:
            return np.ones(x.n, dtype=bool)
        p1, p2 = self.problem.params(x, 0), self.problem.params(x, 1)
        g = basis_for(self.problem.grid).gram_mid
        seg = segment_values(np.einsum("i,kij,j->k", p1, g, p1), np.einsum("i,kij,j->k", p2, g, p2),
                             self.problem.grid)
        m = np.zeros(x.n, dtype=bool)
        m[seg.theta0] = True
        return m


class SocialPlanner(BaseEstimator):
    """Minimize the firms' aggregate risk assessment over schedules, claims and TBR.

    Parameters
    ----------
    type_lower : float
        Lower end ``a`` of the type interval ``[a, 1]``.
    n_cells : int
        Number of type cells in the discretization.
    cell_weights : array-like or None
        Per-cell mass of the type distribution; Lebesgue by default.
    shared_schedule : bool
        Optimize one indirect utility shared by both firms with the TBR
        splitting the market (default), or one schedule per firm.  The
        two-schedule descent is warm-started from the shared optimum.
    freeze_tbr : float or None
        Hold the TBR at this constant (1 = firm 1 monopoly, 0 = firm 2).
    enforce_ir : bool
        Impose the firms' individual rationality constraints.
    max_iter : int
        Maximum number of full sweeps over the blocks.
    tol : float
        Stop once a sweep improves the aggregate by less than ``tol``
        relative to its magnitude.
    cube_size, min_cube, max_cube : float
        Initial, minimal and maximal half-width of the trust-region cube.
        Rejected steps halve the cube; accepted steps double it.
    block_order : tuple of str
    n_starts : int
        Number of starts; extra starts perturb the claims using ``seed``.
    seed : int
    bind_variance : bool
        After descent, rescale slack claims to unit second moment when
        that does not increase the aggregate.
    """

    def __init__(
        self,
        type_lower=0.05,
        n_cells=6,
        cell_weights=None,
        shared_schedule=True,
        freeze_tbr=None,
        enforce_ir=True,
        max_iter=500,
        tol=1e-12,
        cube_size=0.25,
        min_cube=1e-7,
        max_cube=4.0,
        block_order=DEFAULT_ORDER,
        n_starts=1,
        seed=0,
        bind_variance=True,
    ):
        self.type_lower = type_lower
        self.n_cells = n_cells
        self.cell_weights = cell_weights
        self.shared_schedule = shared_schedule
        self.freeze_tbr = freeze_tbr
        self.enforce_ir = enforce_ir
        self.max_iter = max_iter
        self.tol = tol
        self.cube_size = cube_size
        self.min_cube = min_cube
        self.max_cube = max_cube
        self.block_order = block_order
        self.n_starts = n_starts
        self.seed = seed
        self.bind_variance = bind_variance

    # -- setup ---------------------------------------------------------------

    def _validate(self, firms):
        firms = tuple(firms)
        if len(firms) != 2 or not all(isinstance(f, FirmSpec) for f in firms):
            raise TypeError("fit expects a pair of FirmSpec")
        if self.freeze_tbr is not None and not 0 <= self.freeze_tbr <= 1:
            raise ValueError("freeze_tbr must lie in [0, 1]")
        if not 0 < self.min_cube <= self.cube_size <= self.max_cube:
            raise ValueError("cube sizes must satisfy 0 < min_cube <= cube_size <= max_cube")
        unknown = set(self.block_order) - {"alpha", "tail", "beta1", "beta2", "tbr"}
        if unknown:
            raise ValueError(f"unknown blocks in block_order: {sorted(unknown)}")
        grid = TypeGrid(self.type_lower, self.n_cells, self.cell_weights)
        return firms, grid

    def _blocks(self, problem):
        blocks = []
        for name in self.block_order:
            if name in ("alpha", "tail"):
                if problem.shared:
                    blocks.append(_ScheduleBlock(name, problem, self.enforce_ir, (0,), name))
                elif name == "alpha":
                    blocks.append(_ScheduleBlock("alpha1", problem, self.enforce_ir, (0,), "alpha"))
                    blocks.append(_ScheduleBlock("alpha2", problem, self.enforce_ir, (1,), "alpha"))
                else:
                    blocks.append(_ScheduleBlock("tail", problem, self.enforce_ir, (0, 1), "tail"))
            elif name in ("beta1", "beta2"):
                blocks.append(_BetaBlock(name, problem, self.enforce_ir, int(name[-1]) - 1))
            elif self.freeze_tbr is None:
                blocks.append(_TbrBlock(name, problem, self.enforce_ir))
        return blocks

    def initial_decision(self, problem: Problem, rng=None) -> DecisionVector:
        """Zero-trade start: no slopes, claims along the first-order descent direction.

        With zero slopes the aggregator vanishes, so this decision has the
        no-trade aggregate ``rho_1(W_1) + rho_2(W_2)``; the claims are set to
        the normalized direction in which a small trade lowers each firm's
        risk fastest.
        """
        n, d = problem.grid.n, problem.space.atom_count
        tbr = 0.5 if self.freeze_tbr is None else float(self.freeze_tbr)
        x = DecisionVector.zeros(n, d, tbr=tbr)
        w = problem.w
        for i, firm in enumerate(problem.firms):
            g = firm.risk.gradient(firm.endowment.payoffs, w) / w
            z = g - w @ g
            if rng is not None:
                z = z + 0.5 * np.std(z) * rng.standard_normal(d)
                z = z - w @ z
            sd = np.sqrt(w @ z**2)
            x.beta[i] = z / sd if sd > 1e-14 else 0.0
        return x

    # -- feasibility ---------------------------------------------------------

    def _ir_violations(self, problem, x, assessment=None):
        if not self.enforce_ir:
            return np.zeros(2)
        a = problem.evaluate(x).assessment if assessment is None else assessment
        return a - problem.initial

    def _feasible(self, problem, block, x):
        if x.violations(problem.w, tol=FEAS_TOL):
            return False
        return bool(np.all(self._ir_violations(problem, x) <= IR_TOL))

    def _repair(self, problem, block, x):
        """Restore feasibility of ``x`` by line searches inside ``block``."""
        for _ in range(4):
            if self._feasible(problem, block, x):
                return x
            checks = [(v, g) for v, g in block.constraint_checks(x) if v > FEAS_TOL]
            if not checks and self.enforce_ir:
                ev, grads = problem.gradients(x)
                viol = ev.assessment - problem.initial
                worst = int(np.argmax(viol))
                if viol[worst] > IR_TOL:
                    checks = [(viol[worst], block.firm_grads(grads)[worst])]
            if not checks:
                raise InfeasibleStep("infeasible point with no repairable constraint")
            viol, grad = max(checks, key=lambda c: c[0])
            norm = np.linalg.norm(grad)
            values = feasibility_repair(
                block.get(x), grad, lambda v: self._block_ok(problem, block, x, v),
                step=0.5 * viol / norm if norm > 0 else None,
            )
            x = block.set(x, values)
        if not self._feasible(problem, block, x):
            raise InfeasibleStep("repair did not restore feasibility")
        return x

    def _block_ok(self, problem, block, x, values):
        lo, hi = block.box(values.size)
        if np.any(values < lo - FEAS_TOL) or np.any(values > hi + FEAS_TOL):
            return False
        return self._feasible(problem, block, block.set(x, values))

    # -- descent -------------------------------------------------------------

    def _step(self, problem, block, x, current, cube):
        ev, grads = problem.gradients(x)
        firm_grads = block.firm_grads(grads)
        xb = block.get(x)
        lo, hi = block.box(xb.size)
        if isinstance(block, _TbrBlock):
            frozen = ~block._ties(x)
            lo, hi = np.where(frozen, xb, lo), np.where(frozen, xb, hi)
        constraints = block.linear_constraints(x, xb)
        g = np.zeros(xb.size)
        tail_terms = []
        for i, firm in enumerate(problem.firms):
            jac = None
            if firm.risk.kind == "avar":
                jac, smooth = block.split(ev, grads, x, i)
            if jac is not None and np.any(jac):
                # the position is affine in the block: model the tail average exactly
                offset = firm.endowment.payoffs - ev.aggregators[i] * x.beta[i]
                bound = None
                if self.enforce_ir:
                    bound = (smooth, problem.initial[i] + ev.income[i] + smooth @ xb)
                tail_terms.append(TailTerm(offset, jac, problem.w, firm.risk.tail_level, bound))
                g += smooth
                continue
            g += firm_grads[i]
            if self.enforce_ir and np.any(firm_grads[i]):
                rhs = problem.initial[i] - ev.assessment[i] + firm_grads[i] @ xb
                constraints.append(LinearConstraint(firm_grads[i], rhs))
        target = lp_trust_region(g, constraints, xb, cube, (lo, hi), tail_terms=tail_terms)
        y = block.set(x, target)
        y = self._repair(problem, block, y)
        value = problem.aggregate(y)
        if value < current:
            return y, value
        return None

    def _descend(self, problem, x):
        blocks = self._blocks(problem)
        current = problem.aggregate(x)
        trace = [current]
        cubes = {b.name: self.cube_size for b in blocks}
        converged = False
        it = 0
        for it in range(1, self.max_iter + 1):
            start = current
            for block in blocks:
                if not block.relevant(x):
                    continue
                while cubes[block.name] >= self.min_cube:
                    try:
                        step = self._step(problem, block, x, current, cubes[block.name])
                    except InfeasibleStep as exc:
                        log.debug("block %s: %s", block.name, exc)
                        step = None
                    if step is not None:
                        x, current = step
                        cubes[block.name] = min(2.0 * cubes[block.name], self.max_cube)
                        break
                    cubes[block.name] *= 0.5
                else:
                    cubes[block.name] = self.cube_size
            trace.append(current)
            if start - current <= self.tol * max(1.0, abs(start)):
                converged = True
                break
        return x, trace, it, converged

    def _bind_variance(self, problem, x, notes):
        current = problem.aggregate(x)
        w = problem.w
        for i in range(2):
            second = float(w @ x.beta[i] ** 2)
            if second >= 1.0 - 1e-9 or second == 0.0:
                continue
            y = x.copy()
            y.beta[i] = x.beta[i] / np.sqrt(second)
            value = problem.aggregate(y)
            if value <= current and self._feasible(problem, None, y):
                notes.append(f"Z_{i + 1} second moment {second:.6f} rescaled to 1")
                x, current = y, value
            else:
                notes.append(f"Z_{i + 1} second moment {second:.6f} left slack (rescaling raises the aggregate)")
        return x

    def fit(self, firms, y=None):
        """Run the descent for ``firms``, a pair of :class:`FirmSpec`."""
        firms, grid = self._validate(firms)
        problem = Problem(firms, grid, shared=self.shared_schedule)
        rng = np.random.default_rng(self.seed)
        best = None
        for start in range(self.n_starts):
            x0 = self.initial_decision(problem, rng if start > 0 else None)
            warm_trace, warm_iters = [], 0
            if not problem.shared:
                # a shared schedule is a feasible two-schedule point with the same value
                x0, warm_trace, warm_iters, _ = self._descend(Problem(firms, grid, shared=True), x0)
            x, trace, iters, converged = self._descend(problem, x0)
            trace, iters = warm_trace + trace[1:] if warm_trace else trace, warm_iters + iters
            if best is None or trace[-1] < best[1][-1]:
                best = (x, trace, iters, converged)
        x, trace, iters, converged = best
        notes = []
        if self.bind_variance:
            x = self._bind_variance(problem, x, notes)
            if problem.aggregate(x) < trace[-1]:
                trace.append(problem.aggregate(x))
        ev = problem.evaluate(x)
        self.problem_ = problem
        self.grid_ = grid
        self.decision_ = x
        self.result_ = PlannerResult(
            decision=x,
            risk=ev.risk,
            income=ev.income,
            assessment=ev.assessment,
            aggregate=ev.aggregate,
            aggregators=ev.aggregators,
            initial_risk=problem.initial.copy(),
            ir_satisfied=ev.assessment <= problem.initial + 1e-9,
            iterations=iters,
            trace=trace,
            converged=converged,
            shared=self.shared_schedule,
            grid=grid,
            firms=firms,
            notes=notes,
        )
        if all(f.risk.kind == "entropic" for f in firms):
            from riskshare.planner.analysis import extract_fix_mix

            self.result_.fix_mix_K = extract_fix_mix(self.result_)
        self.aggregate_ = ev.aggregate
        self.n_iter_ = iters
        return self

    def score(self, firms, y=None):
        """Risk reduction achieved relative to no trade (higher is better)."""
        check_is_fitted(self, "result_")
        return self.result_.initial_aggregate - self.result_.aggregate

    def transform(self, theta):
        """Contracts offered to each type: array of shape ``(len(theta), 2, d)``.

        Row ``i`` holds firm ``i``'s claim ``sqrt(-v_i'(theta)) Z_i``.
        """
        check_is_fitted(self, "result_")
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        x = self.decision_
        out = np.empty((theta.size, 2, x.d))
        for i in range(2):
            sched = x.schedule(i, self.grid_)
            roots = np.array([sched.root_slope(t) for t in theta])
            out[:, i, :] = roots[:, None] * x.beta[i][None, :]
        return out
