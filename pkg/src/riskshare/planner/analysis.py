"""Structural checks and derived quantities for a planner solution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from riskshare.market import UtilitySchedule, VProfile, envelope_profile, reconstruct_v
from riskshare.planner.objective import FirmSpec, Problem
from riskshare.probability import Claim


@dataclass(frozen=True)
class CollinearityReport:
    mean_residual: float
    variance_residual: float
    binding: tuple

    @property
    def max_residual(self) -> float:
        return max(self.mean_residual, self.variance_residual)


def collinearity_check(result) -> CollinearityReport:
    """Rebuild ``X_i(theta) = sqrt(-v_i'(theta)) Z_i`` per cell and test its moments.

    The variance identity ``Var[X_i(theta)] = -v_i'(theta)`` only holds when
    ``Z_i`` has unit second moment; firms with a slack claim are reported in
    ``binding`` as False and excluded from the variance residual.
    """
    x, grid = result.decision, result.grid
    w = result.firms[0].endowment.space.atom_weights
    mean_res, var_res, binding = 0.0, 0.0, []
    for i in range(2):
        prof = reconstruct_v(x.schedule(i, grid))
        z = x.beta[i]
        contracts = prof.root[:, None] * z[None, :]
        means = contracts @ w
        var = (contracts - means[:, None]) ** 2 @ w
        mean_res = max(mean_res, float(np.max(np.abs(means))))
        is_binding = abs(w @ z**2 - 1.0) <= 1e-9
        binding.append(bool(is_binding))
        if is_binding:
            var_res = max(var_res, float(np.max(np.abs(var + prof.dv))))
    return CollinearityReport(mean_res, var_res, tuple(binding))


def implicit_claim_map(firm: FirmSpec, aggregator: float, z: np.ndarray) -> np.ndarray | None:
    """Right-hand side of the entropic first-order condition for the claim.

    Returns ``-(e - E[e]) / sd(e)`` with ``e = exp(-gamma (W - a Z))`` or None
    when ``e`` is constant.
    """
    if firm.risk.kind != "entropic":
        raise ValueError("the implicit claim equation is specific to the entropic measure")
    w = firm.endowment.space.atom_weights
    s = -firm.risk.risk_aversion * (firm.endowment.payoffs - aggregator * z)
    e = np.exp(s - s.max())
    centred = e - w @ e
    sd = np.sqrt(w @ centred**2)
    if sd <= 1e-14 * max(1.0, np.max(np.abs(e))):
        return None
    return -centred / sd


def entropic_fixed_point_residual(firm: FirmSpec, aggregator: float, z) -> float:
    """``max_k |Z_k - Phi(Z)_k|`` for the entropic first-order map ``Phi``.

    When the exponential of the position is constant the convention
    ``Phi(Z) = 0`` applies.
    """
    z = z.payoffs if isinstance(z, Claim) else np.asarray(z, dtype=float)
    if aggregator < 0:
        raise ValueError("aggregator must be nonnegative")
    phi = implicit_claim_map(firm, aggregator, z)
    if phi is None:
        phi = np.zeros_like(z)
    return float(np.max(np.abs(z - phi)))


def solve_implicit_claim(firm: FirmSpec, aggregator: float, *, damping=0.5, max_iter=10000, tol=1e-13):
    """Damped fixed-point iteration for the entropic claim at a given aggregator.

    The damping factor is halved whenever the fixed-point residual grows,
    which stops the period-two oscillations the plain iteration shows at
    large aggregators.
    """
    w = firm.endowment.space.atom_weights
    z = implicit_claim_map(firm, 0.0, np.zeros_like(firm.endowment.payoffs))
    if z is None:
        return np.zeros_like(firm.endowment.payoffs)
    residual = np.inf
    for _ in range(max_iter):
        phi = implicit_claim_map(firm, aggregator, z)
        if phi is None:
            return np.zeros_like(z)
        step = np.max(np.abs(phi - z))
        if step < tol:
            return z
        if step > residual:
            damping *= 0.5
        residual = step
        nxt = (1 - damping) * z + damping * phi
        nxt = nxt - w @ nxt
        z = nxt / np.sqrt(w @ nxt**2)
    return z


def _upper_root(result, v_upper) -> np.ndarray:
    if isinstance(v_upper, VProfile):
        return v_upper.root
    if isinstance(v_upper, UtilitySchedule):
        return reconstruct_v(v_upper).root
    x = result.decision
    return envelope_profile(x.schedule(0, result.grid), x.schedule(1, result.grid)).root


def fix_mix_ratio(root: np.ndarray, share: np.ndarray, mu: np.ndarray) -> float | None:
    total = float(np.sum(root * mu))
    if total <= 0:
        return None
    return float(np.sum(root * share * mu) / total)


def extract_fix_mix(result, v_upper=None) -> float | None:
    """Constant market split ``K`` reproducing firm 1's aggregator.

    ``K = sum sqrt(-v*') f_1 mu / sum sqrt(-v*') mu`` with ``v*`` the upper
    envelope of the firms' schedules (``v_upper`` may be given explicitly)
    and ``f_1`` firm 1's effective share.  Returns None without trade.
    """
    problem = Problem(result.firms, result.grid, shared=result.shared)
    shares = problem.shares(result.decision)[0]
    return fix_mix_ratio(_upper_root(result, v_upper), shares, result.grid.cell_weights)


def apply_fix_mix(result, k: float):
    """Decision with the TBR replaced by the constant ``k`` over a shared envelope schedule.

    Only valid in shared mode, where the envelope is the shared schedule.
    """
    if not result.shared:
        raise ValueError("the fix-mix replacement is defined for the shared-schedule mode")
    y = result.decision.copy()
    y.tbr[:] = k
    return y


def transfer_sea(result, firms=None):
    """Cash transfer making a risk-sharing allocation individually rational.

    ``rent = sum_i rho_i(W_i) - aggregate``.  A transfer ``T`` from firm 2 to
    firm 1 is admissible when ``A_1 - T <= rho_1(W_1)`` and
    ``A_2 + T <= rho_2(W_2)``; the midpoint of that interval is returned,
    or None when the rent is negative.
    """
    firms = result.firms if firms is None else tuple(firms)
    initial = np.array([f.initial_risk for f in firms])
    a = np.asarray(result.assessment, dtype=float)
    rent = float(initial.sum() - a.sum())
    if rent < -1e-12:
        return None, rent
    lo = a[0] - initial[0]
    hi = initial[1] - a[1]
    return 0.5 * (lo + hi), rent
