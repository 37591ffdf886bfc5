"""Independent cross-checks of the solvers.

Each suite recomputes a quantity by a different route (finite
differences, exhaustive grids, support enumeration, a generic NLP solver,
direct loops over contracts) and compares it with the library's answer.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from riskshare.game import (
    Catalogue,
    CatalogueGrid,
    MixedNashSolver,
    admissible_contracts,
    efficient_aggregate,
    nash_gap,
    payoff,
    per_type_profit,
)
from riskshare.planner import DecisionVector, FirmSpec, Problem, SocialPlanner, entropic_fixed_point_residual
from riskshare.planner.analysis import fix_mix_ratio, solve_implicit_claim
from riskshare.probability import ProbSpace, TypeGrid
from riskshare.risk import RiskMeasure


@dataclass
class OracleReport:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    detail: list = field(default_factory=list)

    def lines(self) -> list:
        status = "PASS" if self.passed else "FAIL"
        out = [f"[{status}] {self.name}"]
        out += [f"    {k}: {v:.6g}" if isinstance(v, float) else f"    {k}: {v}" for k, v in self.metrics.items()]
        out += [f"    {d}" for d in self.detail]
        return out


# -- shared fixtures -------------------------------------------------------------

def reference_firms() -> tuple:
    """Two entropic firms (gamma = 2) on the uniform 14-atom space."""
    space = ProbSpace.uniform(14)
    w1 = 0.5 * np.array([-1, -3, -9, -3, -1, -0.2, -0.1, -0.1, -0.2, 1, -3, -9, -3, -1.0])
    w2 = 0.5 * np.array([-0.03, -0.1, -0.18, -0.2, -1, -3, -9, -10, -3, -1, -0.2, -0.18, -0.1, -0.03])
    risk = RiskMeasure.entropic(2.0)
    return FirmSpec(space.claim(w1), risk), FirmSpec(space.claim(w2), risk)


def random_decision(rng, n: int, d: int, w: np.ndarray, scale: float = 1.0) -> DecisionVector:
    """A feasible shared-schedule decision with claims of unit second moment."""
    alpha = rng.uniform(0, scale, n)
    tail = rng.uniform(0, scale)
    beta = rng.standard_normal((2, d))
    beta -= (beta @ w)[:, None]
    beta /= np.sqrt(beta**2 @ w)[:, None]
    return DecisionVector(np.tile(alpha, (2, 1)), [tail, tail], beta, rng.uniform(0.05, 0.95, n))


# -- finite differences -----------------------------------------------------------

def fd_gradients(samples: int = 20, seed: int = 0, step: float = 1e-6) -> OracleReport:
    """Analytic assessment gradients against central differences."""
    rng = np.random.default_rng(seed)
    firms = reference_firms()
    grid = TypeGrid(0.1, 6)
    problem = Problem(firms, grid)
    worst = 0.0
    for _ in range(samples):
        x = random_decision(rng, grid.n, 14, problem.w, scale=rng.uniform(0.1, 2.0))
        _, grads = problem.gradients(x)
        flat = x.to_flat()
        n, d = grid.n, 14

        def assess(v):
            return problem.evaluate(DecisionVector.from_flat(v, n, d)).assessment

        numeric = np.empty((2, flat.size))
        for j in range(flat.size):
            e = np.zeros(flat.size)
            e[j] = step
            numeric[:, j] = (assess(flat + e) - assess(flat - e)) / (2 * step)
        for i in range(2):
            # both alpha rows and both tails are the shared schedule
            alpha_fd = numeric[i, :n] + numeric[i, n:2 * n]
            tail_fd = numeric[i, 2 * n] + numeric[i, 2 * n + 1]
            beta_fd = numeric[i, 2 * n + 2 + i * d:2 * n + 2 + (i + 1) * d]
            tbr_fd = numeric[i, 2 * n + 2 + 2 * d:]
            sign = 1.0 if i == 0 else -1.0
            pairs = [
                (grads[i]["params"][0], tail_fd),
                (grads[i]["params"][1:], alpha_fd),
                (grads[i]["beta"], beta_fd),
                (sign * grads[i]["shares"], tbr_fd),
            ]
            for analytic, fd in pairs:
                err = np.max(np.abs(np.atleast_1d(analytic) - fd)) / max(np.max(np.abs(fd)), 1e-12)
                worst = max(worst, float(err))
    # risk-measure gradients on their own
    for measure in (RiskMeasure.entropic(2.0), RiskMeasure.avar(0.1)):
        for _ in range(samples):
            w = rng.dirichlet(np.ones(10))
            xv = rng.standard_normal(10)
            g = measure.gradient(xv, w)
            fd = np.array([(measure.value(xv + step * e, w) - measure.value(xv - step * e, w)) / (2 * step)
                           for e in np.eye(10)])
            worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1e-12)))
    return OracleReport("fd-gradients", worst < 1e-5, {"max_relative_error": worst, "tolerance": 1e-5})


# -- exhaustive grid ---------------------------------------------------------------

TINY_W = (np.array([-1.0, 0.2]), np.array([0.3, -0.8]))


def tiny_instance() -> tuple:
    space = ProbSpace.uniform(2)
    risk = RiskMeasure.entropic(2.0)
    return tuple(FirmSpec(space.claim(w), risk) for w in TINY_W), TypeGrid(0.1, 2)


def _entropic(x, w, gamma):
    s = -gamma * x
    top = s.max(axis=-1, keepdims=True)
    return (top[..., 0] + np.log(np.exp(s - top) @ w)) / gamma


def brute_force_tiny(points: int = 21, upper: float = 3.0) -> dict:
    """Exhaustive search over ``points**5`` decisions of the tiny instance.

    The grid covers ``alpha_0, alpha_1, tail`` in ``[0, upper]`` and the
    signed claim scales ``s_1, s_2`` in ``[-1, 1]`` with
    ``Z_i = s_i (1, -1)``; the TBR is 1/2 in every cell.  The objective is
    rebuilt from closed-form integrals of the piecewise-linear ``w``.
    """
    firms, grid = tiny_instance()
    a, h = grid.a, grid.width
    e1, m0, m1 = a + h, a + 0.5 * h, a + 1.5 * h
    vals = np.linspace(0.0, upper, points)
    al0, al1, tail = (g.ravel() for g in np.meshgrid(vals, vals, vals, indexing="ij"))
    w_e1 = tail + al1 * h  # w at the inner edge
    w0 = w_e1 + al0 * (e1 - m0)
    w1 = tail + al1 * (1.0 - m1)

    def seg(lo, hi, length):
        return length * (lo**2 + lo * hi + hi**2) / 3.0

    v1 = seg(w1, tail, 1.0 - m1)
    v0 = seg(w0, w_e1, e1 - m0) + seg(w_e1, tail, h)
    share = 0.5
    agg = share * h * (w0 + w1)
    neg_income = share * h * ((v0 + m0 * w0**2) + (v1 + m1 * w1**2))
    s = np.linspace(-1.0, 1.0, points)
    z = np.stack([s, -s], axis=1)
    weights = np.full(2, 0.5)
    # each firm's assessment depends on its own claim scale only, so the
    # minimum over (s_1, s_2) splits into two independent minima
    total = np.zeros_like(agg)
    for firm in firms:
        pos = firm.endowment.payoffs[None, None, :] - agg[:, None, None] * z[None, :, :]
        assess = _entropic(pos, weights, firm.risk.risk_aversion) + neg_income[:, None]
        assess = np.where(assess <= firm.initial_risk + 1e-12, assess, np.inf)
        total = total + assess.min(axis=1)
    best = int(np.argmin(total))
    return {"value": float(total[best]), "alpha": (float(al0[best]), float(al1[best])), "tail": float(tail[best]),
            "evaluated": points**5}


def tiny_brute_force(points: int = 21, max_iter: int = 2000) -> OracleReport:
    """Solver on the tiny instance against the exhaustive grid optimum (2% tolerance)."""
    firms, grid = tiny_instance()
    brute = brute_force_tiny(points)
    planner = SocialPlanner(type_lower=grid.a, n_cells=grid.n, freeze_tbr=0.5, max_iter=max_iter).fit(firms)
    solver = planner.aggregate_
    gap = (solver - brute["value"]) / abs(brute["value"])
    return OracleReport(
        "tiny-brute-force",
        gap <= 0.02,
        {"solver_aggregate": solver, "grid_optimum": brute["value"], "relative_gap": gap,
         "grid_points": brute["evaluated"]},
        ["relative_gap = (solver - grid) / |grid|; negative means the solver beats the grid"],
    )


# -- fix-mix -------------------------------------------------------------------------

def fixmix_equivalence(samples: int = 50, seed: int = 0) -> OracleReport:
    """Replacing the TBR by the constant fix-mix ratio leaves the aggregate unchanged."""
    rng = np.random.default_rng(seed)
    firms = reference_firms()
    grid = TypeGrid(0.1, 6)
    problem = Problem(firms, grid)
    worst = 0.0
    for _ in range(samples):
        x = random_decision(rng, grid.n, 14, problem.w, scale=rng.uniform(0.1, 2.0))
        root = np.array([x.tail[0] + x.alpha[0][k] * (grid.edges[k + 1] - grid.midpoints[k])
                         + grid.width * x.alpha[0][k + 1:].sum() for k in range(grid.n)])
        k = fix_mix_ratio(root, x.tbr, grid.cell_weights)
        y = x.copy()
        y.tbr[:] = k
        before, after = problem.evaluate(x), problem.evaluate(y)
        worst = max(worst, abs(before.aggregate - after.aggregate),
                    float(np.max(np.abs(before.aggregators - after.aggregators))))
    return OracleReport("fixmix-equivalence", worst < 1e-9, {"max_residual": worst, "tolerance": 1e-9})


# -- equilibria ------------------------------------------------------------------------

def support_enumeration(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> list:
    """All equilibria found by enumerating every pair of supports."""
    m, n = a.shape
    found = []

    def indifferent(mat, own, other, size):
        lhs = np.zeros((len(own) + 1, len(other) + 1))
        lhs[:-1, :-1] = mat[np.ix_(own, other)]
        lhs[:-1, -1] = -1.0
        lhs[-1, :-1] = 1.0
        rhs = np.zeros(len(own) + 1)
        rhs[-1] = 1.0
        sol, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
        if np.max(np.abs(lhs @ sol - rhs)) > tol or np.any(sol[:-1] < -tol):
            return None
        p = np.zeros(size)
        p[list(other)] = np.clip(sol[:-1], 0, None)
        return p / p.sum()

    for r in range(1, m + 1):
        for rows in itertools.combinations(range(m), r):
            for c in range(1, n + 1):
                for cols in itertools.combinations(range(n), c):
                    y = indifferent(a, rows, cols, n)
                    x = indifferent(b.T, cols, rows, m)
                    if x is None or y is None:
                        continue
                    if np.max(a @ y) > x @ a @ y + tol or np.max(x @ b) > x @ b @ y + tol:
                        continue
                    found.append((x, y))
    return found


def random_catalogue_grid(rng, d: int = 3) -> CatalogueGrid:
    space = ProbSpace.uniform(d)
    basics = tuple(tuple(space.claim(rng.normal(0.4, 0.5, d)) for _ in range(2)) for _ in range(2))
    prices = np.round(rng.uniform(0.0, 0.6, 3), 3)
    rates = tuple(rng.uniform(0.0, 0.2, 2) for _ in range(2))
    return CatalogueGrid(basics, prices, rates, TypeGrid(0.1, 5), hull_resolution=0.5, price_bound=1.0)


def random_catalogue(rng, grid: CatalogueGrid, firm: int, size: int) -> Catalogue:
    """Up to ``size`` contracts drawn from the admissible ones (null catalogue if none)."""
    pool = admissible_contracts(grid, firm)
    if not pool:
        return Catalogue.null(firm)
    picks = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
    return Catalogue(firm, [pool[i] for i in sorted(picks)])


def random_catalogue_tables(rng, size: int = 3):
    """Efficient-TBR payoff tables for ``size`` random catalogues per firm."""
    grid = random_catalogue_grid(rng)
    cats = [[random_catalogue(rng, grid, firm, int(rng.integers(1, 3))) for _ in range(size)] for firm in range(2)]
    a = np.array([[payoff(c1, c2, grid)[0] for c2 in cats[1]] for c1 in cats[0]])
    b = np.array([[payoff(c1, c2, grid)[1] for c2 in cats[1]] for c1 in cats[0]])
    return a, b


def nash_oracle(games: int = 50, seed: int = 0, threshold: float = 0.01) -> OracleReport:
    """Equilibrium search on random 3x3 tables against support enumeration."""
    rng = np.random.default_rng(seed)
    worst_eps, cert_err, mismatches, pure_games = 0.0, 0.0, 0, 0
    for g in range(games):
        if g % 2 == 0:
            a, b = random_catalogue_tables(rng)
        else:
            a, b = rng.random((3, 3)), rng.random((3, 3))
        res = MixedNashSolver(threshold=threshold, seed=seed).solve_tables(a, b)
        x, y = res.profile.probs
        worst_eps = max(worst_eps, res.eps)
        cert_err = max(cert_err, abs(res.eps - nash_gap(a, b, x, y)))
        exact = support_enumeration(a, b)
        pure = {(int(np.argmax(p)), int(np.argmax(q))) for p, q in exact if p.max() > 1 - 1e-12 and q.max() > 1 - 1e-12}
        if pure:
            pure_games += 1
            mine = (int(np.argmax(x)), int(np.argmax(y)))
            if not (x.max() > 1 - 1e-12 and y.max() > 1 - 1e-12 and mine in pure):
                mismatches += 1
    passed = worst_eps <= threshold and cert_err < 1e-12 and mismatches == 0
    return OracleReport("support-enumeration", passed, {
        "games": games, "max_eps": worst_eps, "certificate_error": cert_err,
        "pure_equilibrium_games": pure_games, "pure_mismatches": mismatches,
    })


# -- implicit claim equation --------------------------------------------------------

def fixed_point_oracle(aggregators=(0.25, 0.5, 1.0)) -> OracleReport:
    """Damped fixed point of the entropic claim equation against a generic NLP solver."""
    firms = reference_firms()
    worst_gap, worst_res = 0.0, 0.0
    for firm in firms:
        w = firm.endowment.space.atom_weights
        for agg in aggregators:
            z_fp = solve_implicit_claim(firm, agg)
            worst_res = max(worst_res, entropic_fixed_point_residual(firm, agg, z_fp))
            res = minimize(
                lambda z: firm.risk.value(firm.endowment.payoffs - agg * z, w),
                np.zeros_like(w) + np.linspace(-1, 1, w.size) * 0.1,
                jac=lambda z: -agg * firm.risk.gradient(firm.endowment.payoffs - agg * z, w),
                constraints=[{"type": "eq", "fun": lambda z: w @ z},
                             {"type": "ineq", "fun": lambda z: 1.0 - w @ z**2}],
                method="SLSQP", options={"ftol": 1e-15, "maxiter": 1000},
            )
            worst_gap = max(worst_gap, float(np.max(np.abs(res.x - z_fp))))
    return OracleReport("fixed-point", worst_gap < 1e-4 and worst_res < 1e-8,
                        {"max_claim_gap": worst_gap, "max_fixed_point_residual": worst_res})


# -- catalogue quadrature ----------------------------------------------------------

def _exhaustive_profits(theta, cat1, cat2, grid):
    """Per-type profits by looping over every contract of both catalogues."""
    out = []
    for t in theta:
        best = []
        for cat in (cat1, cat2):
            v, prof = 0.0, 0.0
            top = max(grid.product_mean(cat.firm)[j] - t * grid.product_variance(cat.firm)[j] - p
                      for j, p in cat.contracts)
            for j, p in cat.contracts:
                u = grid.product_mean(cat.firm)[j] - t * grid.product_variance(cat.firm)[j] - p
                if u >= top - 1e-12 * (1 + abs(top)):
                    prof = max(prof, p - grid.cost(cat.firm, j)) if v else p - grid.cost(cat.firm, j)
                    v = 1
            best.append((top, prof if top > 1e-12 * (1 + abs(top)) else 0.0))
        (v1, p1), (v2, p2) = best
        tol = 1e-12 * (1 + max(abs(v1), abs(v2)))
        out.append((p1 if v1 >= v2 - tol else 0.0, p2 if v2 >= v1 - tol else 0.0))
    return np.array(out).T


def catalogue_aggregate(games: int = 50, seed: int = 0, random_tbrs: int = 100) -> OracleReport:
    """Per-type profits against exhaustive loops; efficient aggregate maximality."""
    rng = np.random.default_rng(seed)
    profit_err, agg_err, dominance = 0.0, 0.0, 0.0
    for _ in range(games):
        grid = random_catalogue_grid(rng)
        cats = [random_catalogue(rng, grid, f, int(rng.integers(1, 4))) for f in range(2)]
        types = grid.type_grid
        (pi1, pi2), _ = per_type_profit(types.midpoints, cats[0], cats[1], grid)
        ref = _exhaustive_profits(types.midpoints, cats[0], cats[1], grid)
        profit_err = max(profit_err, float(np.max(np.abs(ref - np.stack([pi1, pi2])))))
        eff = sum(payoff(cats[0], cats[1], grid, "efficient"))
        quad = float(np.sum(np.max(ref, axis=0) * types.cell_weights))
        agg_err = max(agg_err, abs(eff - quad), abs(eff - efficient_aggregate(cats[0], cats[1], grid)))
        for _ in range(random_tbrs):
            f = rng.uniform(0, 1, types.n)
            dominance = max(dominance, sum(payoff(cats[0], cats[1], grid, "fixed", f)) - eff)
    passed = profit_err < 1e-12 and agg_err < 1e-12 and dominance <= 1e-12
    return OracleReport("catalogue-aggregate", passed, {
        "games": games, "max_profit_error": profit_err, "max_aggregate_error": agg_err,
        "max_random_tbr_excess": dominance,
    })


SUITES = {
    "fd-gradients": fd_gradients,
    "tiny-brute-force": tiny_brute_force,
    "fixmix-equivalence": fixmix_equivalence,
    "support-enumeration": nash_oracle,
    "fixed-point": fixed_point_oracle,
    "catalogue-aggregate": catalogue_aggregate,
}


def run_suite(name: str) -> list:
    """Run one suite by name, or every suite for ``"all"``."""
    if name == "all":
        return [fn() for fn in SUITES.values()]
    if name not in SUITES:
        raise KeyError(name)
    return [SUITES[name]()]
