"""Linearized trust-region subproblem and constraint repair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog


class InfeasibleStep(RuntimeError):
    """The linearized step or the repair could not produce a feasible point."""


@dataclass(frozen=True)
class LinearConstraint:
    """``coef @ x <= rhs`` (``equality=False``) or ``coef @ x == rhs``."""

    coef: np.ndarray
    rhs: float
    equality: bool = False

    def residual(self, x) -> float:
        r = float(self.coef @ x - self.rhs)
        return abs(r) if self.equality else max(r, 0.0)


@dataclass(frozen=True)
class TailTerm:
    """Exact piecewise-linear model of a tail average of an affine position.

    Represents ``min_c c + (1/level) sum_k weights_k (-X_k - c)^+`` with
    ``X = offset + jacobian @ (x - center)``, i.e. the average value at risk
    of ``X``.  The term is added to the objective; when ``bound`` is given
    as ``(coef, rhs)`` the constraint ``coef @ x + term <= rhs`` is imposed
    as well.
    """

    offset: np.ndarray
    jacobian: np.ndarray
    weights: np.ndarray
    level: float
    bound: tuple | None = None


def _bounds(center, half_width, box):
    lo, hi = center - half_width, center + half_width
    if box is not None:
        blo, bhi = box
        lo = np.maximum(lo, np.broadcast_to(blo, center.shape))
        hi = np.minimum(hi, np.broadcast_to(bhi, center.shape))
    return lo, hi


def lp_trust_region(gradient, linear_constraints, cube_center, cube_half_width, box=None, *, tail_terms=(), tol=1e-12):
    """Minimize ``gradient @ x`` over the cube around ``cube_center``.

    The feasible set is the cube ``|x - center| <= half_width`` intersected
    with ``box = (lower, upper)`` and the affine ``linear_constraints``.
    Coordinates with a zero gradient stay at the centre when the closed-form
    vertex is feasible; otherwise the LP is handed to HiGHS.  ``tail_terms``
    add exact piecewise-linear :class:`TailTerm` models to the objective
    through auxiliary epigraph variables.

    Raises
    ------
    InfeasibleStep
        If the feasible set is empty.
    """
    g = np.asarray(gradient, dtype=float)
    c = np.asarray(cube_center, dtype=float)
    lo, hi = _bounds(c, float(cube_half_width), box)
    if np.any(lo > hi + tol):
        raise InfeasibleStep("cube does not meet the box")
    hi = np.maximum(hi, lo)
    constraints = list(linear_constraints or ())

    if not tail_terms:
        vertex = np.where(g > 0, lo, np.where(g < 0, hi, np.clip(c, lo, hi)))
        if all(k.residual(vertex) <= tol * (1 + abs(k.rhs)) for k in constraints):
            return vertex

    m = c.size
    extra = sum(t.offset.size + 1 for t in tail_terms)
    cost = np.concatenate([g, np.zeros(extra)])
    bounds = [(lo[j], hi[j]) for j in range(m)]
    rows_ub, rhs_ub, rows_eq, rhs_eq = [], [], [], []
    for k in constraints:
        row = np.concatenate([k.coef, np.zeros(extra)])
        (rows_eq if k.equality else rows_ub).append(row)
        (rhs_eq if k.equality else rhs_ub).append(k.rhs)
    col = m
    for t in tail_terms:
        d = t.offset.size
        objective = np.zeros(m + extra)
        objective[col] = 1.0
        objective[col + 1:col + 1 + d] = t.weights / t.level
        cost += objective
        bounds += [(None, None)] + [(0.0, None)] * d
        # u_k >= -(offset_k + J_k (x - center)) - c
        block = np.zeros((d, m + extra))
        block[:, :m] = -t.jacobian
        block[:, col] = -1.0
        block[np.arange(d), col + 1 + np.arange(d)] = -1.0
        rows_ub.extend(block)
        rhs_ub.extend(t.offset - t.jacobian @ c)
        if t.bound is not None:
            coef, rhs = t.bound
            row = objective.copy()
            row[:m] += coef
            rows_ub.append(row)
            rhs_ub.append(rhs)
        col += d + 1
    res = linprog(
        cost,
        A_ub=np.array(rows_ub) if rows_ub else None,
        b_ub=np.array(rhs_ub) if rows_ub else None,
        A_eq=np.array(rows_eq) if rows_eq else None,
        b_eq=np.array(rhs_eq) if rows_eq else None,
        bounds=bounds,
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleStep(res.message)
    return np.clip(res.x[:m], lo, hi)


def feasibility_repair(point, violated_constraint_gradient, constraints, *, step=None, max_doublings=40, bisections=16):
    """Move ``point`` along ``-violated_constraint_gradient`` until feasible.

    ``constraints`` is a callable returning True when a point is feasible.
    Starting from ``step`` (a tiny multiple of ``|point|`` by default), the
    step length is doubled until a feasible point is found and then bisected
    back towards the smallest feasible step, so the returned point stays
    close to the original one.

    Raises
    ------
    InfeasibleStep
        When no feasible point is found within ``max_doublings`` doublings.
    """
    x = np.asarray(point, dtype=float)
    if constraints(x):
        return x
    direction = -np.asarray(violated_constraint_gradient, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0:
        raise InfeasibleStep("constraint gradient vanishes at an infeasible point")
    direction = direction / norm
    if step is None:
        step = 1e-8 * max(np.linalg.norm(x), 1.0)
    lo, hi = 0.0, float(step)
    for _ in range(max_doublings):
        if constraints(x + hi * direction):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise InfeasibleStep("line search did not reach the feasible set")
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if constraints(x + mid * direction):
            hi = mid
        else:
            lo = mid
    return x + hi * direction
