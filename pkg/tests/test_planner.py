import itertools
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from riskshare.experiment import planner_for
from riskshare.oracles import random_decision, reference_firms
from riskshare.planner import (
    DecisionVector,
    FirmSpec,
    InfeasibleStep,
    LinearConstraint,
    Problem,
    SocialPlanner,
    assemble_objective,
    collinearity_check,
    entropic_fixed_point_residual,
    extract_fix_mix,
    feasibility_repair,
    lp_trust_region,
    transfer_sea,
)
from riskshare.planner.analysis import apply_fix_mix, fix_mix_ratio, solve_implicit_claim
from riskshare.planner.lp import TailTerm
from riskshare.market import reconstruct_v
from riskshare.probability import ProbSpace, TypeGrid
from riskshare.risk import RiskMeasure

GRID = TypeGrid(0.1, 6)


@pytest.fixture(scope="module")
def problem():
    return Problem(reference_firms(), GRID)


class TestDecisionVector:
    def test_flat_round_trip(self, rng):
        x = random_decision(rng, 6, 14, np.full(14, 1 / 14))
        y = DecisionVector.from_flat(x.to_flat(), 6, 14)
        np.testing.assert_array_equal(y.to_flat(), x.to_flat())

    def test_bad_flat_size(self):
        with pytest.raises(ValueError):
            DecisionVector.from_flat(np.zeros(5), 6, 14)

    def test_violations(self):
        w = np.full(4, 0.25)
        x = DecisionVector.zeros(2, 4)
        assert x.violations(w) == []
        x.alpha[0, 0] = -1
        x.beta[1] = [3.0, 0.0, 0.0, 0.0]
        x.tbr[0] = 1.5
        assert set(x.violations(w)) == {"alpha >= 0", "0 <= tbr <= 1", "E[Z_2] = 0", "E[Z_2^2] <= 1"}


class TestObjective:
    def test_zero_decision_is_no_trade(self, problem):
        firms = reference_firms()
        ev = assemble_objective(firms, DecisionVector.zeros(6, 14), GRID)
        np.testing.assert_allclose(ev.risk, [f.initial_risk for f in firms])
        np.testing.assert_array_equal(ev.income, 0.0)
        assert ev.aggregate == pytest.approx(7.36, abs=0.02)

    def test_rejects_infeasible_decision(self):
        x = DecisionVector.zeros(6, 14)
        x.beta[0, 0] = 5.0
        with pytest.raises(ValueError, match="E\\[Z_1\\]"):
            assemble_objective(reference_firms(), x, GRID)

    def test_shared_mode_needs_equal_schedules(self):
        x = DecisionVector.zeros(6, 14)
        x.alpha[0, 0] = 1.0
        with pytest.raises(ValueError, match="shared"):
            assemble_objective(reference_firms(), x, GRID)
        assemble_objective(reference_firms(), x, GRID, shared=False)

    def test_needs_two_firms(self):
        with pytest.raises(ValueError):
            Problem(reference_firms()[:1], GRID)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_firm_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        f1, f2 = reference_firms()
        p, q = Problem((f1, f2), GRID), Problem((f2, f1), GRID)
        x = random_decision(rng, 6, 14, p.w)
        y = x.copy()
        y.beta = x.beta[::-1].copy()
        y.tbr = 1.0 - x.tbr
        a, b = p.evaluate(x), q.evaluate(y)
        np.testing.assert_allclose(a.assessment, b.assessment[::-1], rtol=1e-12, atol=1e-12)

    def test_income_is_nonpositive(self, problem, rng):
        for _ in range(20):
            assert np.all(problem.evaluate(random_decision(rng, 6, 14, problem.w)).income <= 1e-12)

    def test_gradients_match_finite_differences(self, problem, rng):
        x = random_decision(rng, 6, 14, problem.w)
        _, grads = problem.gradients(x)
        h = 1e-6
        for i in range(2):
            for j in range(14):
                up, down = x.copy(), x.copy()
                up.beta[i, j] += h
                down.beta[i, j] -= h
                fd = (problem.evaluate(up).assessment[i] - problem.evaluate(down).assessment[i]) / (2 * h)
                assert grads[i]["beta"][j] == pytest.approx(fd, rel=1e-5, abs=1e-8)
            up, down = x.copy(), x.copy()
            up.tail += h
            down.tail -= h
            fd = (problem.evaluate(up).assessment[i] - problem.evaluate(down).assessment[i]) / (2 * h)
            assert grads[i]["params"][0] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_aggregator_sufficiency(self, seed):
        # a TBR rearrangement preserving each aggregator leaves every risk unchanged
        rng = np.random.default_rng(seed)
        p = Problem(reference_firms(), GRID)
        x = random_decision(rng, 6, 14, p.w)
        root = p.phi @ p.params(x, 0)
        weights = root * GRID.cell_weights
        # move share mass between two cells along a direction orthogonal to the weights
        j, k = rng.choice(6, 2, replace=False)
        direction = np.zeros(6)
        direction[j], direction[k] = weights[k], -weights[j]
        room = min(x.tbr[j], 1 - x.tbr[j], x.tbr[k], 1 - x.tbr[k]) / max(weights.max(), 1e-12)
        y = x.copy()
        y.tbr = x.tbr + 0.9 * room * direction
        a, b = p.evaluate(x), p.evaluate(y)
        np.testing.assert_allclose(a.aggregators, b.aggregators, atol=1e-12)
        np.testing.assert_allclose(a.risk, b.risk, atol=1e-10)


def vertex_oracle(g, constraints, lo, hi):
    """Minimum of ``g @ x`` by enumerating every basic solution of the polytope."""
    m = g.size
    rows = [(np.eye(m)[j], lo[j]) for j in range(m)] + [(np.eye(m)[j], hi[j]) for j in range(m)]
    rows += [(c.coef, c.rhs) for c in constraints]
    best = np.inf
    for active in itertools.combinations(range(len(rows)), m):
        a = np.array([rows[r][0] for r in active])
        if abs(np.linalg.det(a)) < 1e-10:
            continue
        x = np.linalg.solve(a, np.array([rows[r][1] for r in active]))
        if np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9) and all(c.coef @ x <= c.rhs + 1e-9 for c in constraints):
            best = min(best, float(g @ x))
    return best


class TestTrustRegion:
    def test_corner(self):
        np.testing.assert_allclose(lp_trust_region([1.0, 1.0], [], np.zeros(2), 0.3), [-0.3, -0.3])

    def test_zero_gradient_keeps_centre(self):
        c = np.array([0.2, -0.4, 1.0])
        np.testing.assert_array_equal(lp_trust_region(np.zeros(3), [], c, 0.5), c)

    def test_box_clips(self):
        out = lp_trust_region([1.0, -1.0], [], np.zeros(2), 1.0, (np.zeros(2), np.full(2, 0.5)))
        np.testing.assert_allclose(out, [0.0, 0.5])

    def test_empty_box(self):
        with pytest.raises(InfeasibleStep):
            lp_trust_region([1.0], [], np.zeros(1), 0.1, (np.ones(1), np.full(1, 2.0)))

    def test_infeasible_constraints(self):
        k = LinearConstraint(np.array([1.0, 1.0]), -5.0)
        with pytest.raises(InfeasibleStep):
            lp_trust_region([1.0, 0.0], [k], np.zeros(2), 1.0)

    def test_equality_constraint(self):
        k = LinearConstraint(np.array([1.0, 1.0]), 0.0, equality=True)
        out = lp_trust_region([1.0, 0.0], [k], np.zeros(2), 1.0)
        np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-9)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40)
    def test_random_instances_match_vertex_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = rng.normal(size=5)
        center = rng.normal(size=5)
        half = rng.uniform(0.1, 1.0)
        # constraints that are strictly satisfied at the centre keep the LP feasible
        constraints = []
        for _ in range(2):
            coef = rng.normal(size=5)
            constraints.append(LinearConstraint(coef, float(coef @ center + rng.uniform(0.01, 0.5))))
        x = lp_trust_region(g, constraints, center, half)
        assert np.all(np.abs(x - center) <= half + 1e-9)
        assert all(c.coef @ x <= c.rhs + 1e-8 for c in constraints)
        assert g @ x == pytest.approx(vertex_oracle(g, constraints, center - half, center + half), abs=1e-8)

    def test_tail_term_is_exact(self):
        # minimise the tail average of an affine position in one variable against a fine scan
        w = np.full(4, 0.25)
        offset = np.array([-1.0, 0.5, 0.2, -0.3])
        jac = np.array([[1.0], [-0.5], [0.2], [0.8]])
        term = TailTerm(offset, jac, w, 0.3)
        y = lp_trust_region(np.zeros(1), [], np.zeros(1), 1.0, tail_terms=[term])
        measure = RiskMeasure.avar(0.3)
        scan = np.linspace(-1, 1, 20001)
        values = [measure.value(offset + jac[:, 0] * t, w) for t in scan]
        assert measure.value(offset + jac[:, 0] * y[0], w) == pytest.approx(min(values), abs=1e-6)

    def test_tail_term_bound(self):
        w = np.full(2, 0.5)
        term = TailTerm(np.array([-1.0, 1.0]), np.array([[1.0], [0.0]]), w, 0.5, bound=(np.zeros(1), 0.5))
        y = lp_trust_region(np.array([1.0]), [], np.zeros(1), 2.0, tail_terms=[term])
        # the bound forces rho(X) = 1 - y <= 0.5
        assert y[0] == pytest.approx(0.5, abs=1e-9)


class TestRepair:
    def test_feasible_unchanged(self):
        x = np.array([0.1, 0.2])
        assert feasibility_repair(x, [1.0, 0.0], lambda v: True) is x

    def test_second_moment(self):
        w = np.full(4, 0.25)
        beta = np.array([1.2, -1.2, 1.0, -1.0])
        beta *= np.sqrt(1.2 / (w @ beta**2))
        out = feasibility_repair(beta, 2 * w * beta, lambda v: w @ v**2 <= 1.0)
        assert w @ out**2 <= 1.0
        assert w @ out**2 > 0.99

    def test_zero_gradient(self):
        with pytest.raises(InfeasibleStep):
            feasibility_repair(np.ones(2), np.zeros(2), lambda v: False)

    def test_unreachable(self):
        with pytest.raises(InfeasibleStep):
            feasibility_repair(np.ones(2), [1.0, 0.0], lambda v: False, max_doublings=5)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=200)
    def test_affine_projection_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 8))
        coef = rng.normal(size=d)
        x = rng.normal(size=d) * 3
        rhs = float(coef @ x - rng.uniform(1e-3, 5))
        out = feasibility_repair(x, coef, lambda v: coef @ v <= rhs)
        assert coef @ out <= rhs
        distance = (coef @ x - rhs) / np.linalg.norm(coef)
        assert np.linalg.norm(out - x) <= 2 * distance


class TestAnalysis:
    def test_collinearity_zero_decision(self):
        firms = reference_firms()
        planner = SocialPlanner(type_lower=0.1, max_iter=1)
        planner.fit(firms)
        result = planner.result_
        result.decision = DecisionVector.zeros(6, 14)
        assert collinearity_check(result).max_residual == 0.0

    def test_collinearity_fault_injection(self, duopoly):
        r = duopoly.result_
        assert collinearity_check(r).max_residual < 1e-6
        broken = SimpleNamespace(**vars(r))
        broken.decision = r.decision.copy()
        broken.decision.beta[0] = broken.decision.beta[0] + 0.01
        report = collinearity_check(broken)
        expected = 0.01 * np.max(reconstruct_v(r.decision.schedule(0, r.grid)).root)
        assert report.mean_residual == pytest.approx(expected, rel=1e-9)

    def test_fixed_point_at_zero_aggregator(self):
        for firm in reference_firms():
            z = solve_implicit_claim(firm, 0.0)
            assert entropic_fixed_point_residual(firm, 0.0, z) < 1e-8

    @pytest.mark.parametrize("agg", [0.25, 1.0])
    def test_fixed_point_with_trade(self, agg):
        firm = reference_firms()[1]
        z = solve_implicit_claim(firm, agg)
        assert entropic_fixed_point_residual(firm, agg, z) < 1e-8

    def test_fixed_point_constant_endowment(self):
        space = ProbSpace.uniform(3)
        firm = FirmSpec(space.claim(np.full(3, -1.0)), RiskMeasure.entropic(2.0))
        assert entropic_fixed_point_residual(firm, 0.5, np.zeros(3)) == 0.0
        assert not solve_implicit_claim(firm, 0.5).any()

    def test_fixed_point_rejects_avar(self, avar_firms):
        with pytest.raises(ValueError):
            entropic_fixed_point_residual(avar_firms[0], 0.1, np.zeros(14))

    def test_fix_mix_of_constant_split(self, rng):
        root = rng.uniform(0.1, 2, 6)
        assert fix_mix_ratio(root, np.full(6, 0.37), GRID.cell_weights) == pytest.approx(0.37)
        assert fix_mix_ratio(np.zeros(6), np.full(6, 0.37), GRID.cell_weights) is None

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_fix_mix_matches_quadrature(self, seed):
        rng = np.random.default_rng(seed)
        root, f = rng.uniform(0, 2, 6), rng.uniform(0, 1, 6)
        num = sum(root[k] * f[k] * GRID.width for k in range(6))
        den = sum(root[k] * GRID.width for k in range(6))
        assert fix_mix_ratio(root, f, GRID.cell_weights) == pytest.approx(num / den, rel=1e-12)

    def test_fix_mix_equivalence_on_solution(self, duopoly):
        r = duopoly.result_
        k = extract_fix_mix(r)
        y = apply_fix_mix(r, k)
        before, after = duopoly.problem_.evaluate(r.decision), duopoly.problem_.evaluate(y)
        np.testing.assert_allclose(after.aggregators, before.aggregators, atol=1e-9)
        assert after.aggregate == pytest.approx(before.aggregate, abs=1e-9)

    def test_transfer_interval(self):
        firms = reference_firms()
        initial = np.array([f.initial_risk for f in firms])
        fake = SimpleNamespace(firms=firms, assessment=initial + [0.3, -0.5])
        t, rent = transfer_sea(fake)
        assert rent == pytest.approx(0.2)
        assert t == pytest.approx(0.4)

    def test_transfer_no_trade(self):
        firms = reference_firms()
        fake = SimpleNamespace(firms=firms, assessment=np.array([f.initial_risk for f in firms]))
        t, rent = transfer_sea(fake)
        assert rent == pytest.approx(0.0, abs=1e-12) and t == pytest.approx(0.0, abs=1e-12)

    def test_transfer_negative_rent(self):
        firms = reference_firms()
        fake = SimpleNamespace(firms=firms, assessment=np.array([f.initial_risk + 0.1 for f in firms]))
        assert transfer_sea(fake)[0] is None

    def test_zero_transfer_admissible_on_solution(self, duopoly):
        r = duopoly.result_
        assert np.all(r.assessment <= r.initial_risk + 1e-9)
        _, rent = transfer_sea(r)
        assert rent > 0


class TestPlanner:
    def test_estimator_api(self):
        planner = SocialPlanner(type_lower=0.1, max_iter=7)
        params = planner.get_params()
        assert params["max_iter"] == 7 and params["type_lower"] == 0.1
        other = clone(planner).set_params(freeze_tbr=1.0)
        assert other.freeze_tbr == 1.0 and planner.freeze_tbr is None

    @pytest.mark.parametrize("kwargs", [{"freeze_tbr": 2.0}, {"cube_size": 10.0}, {"block_order": ("alpha", "gamma")}])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ValueError):
            SocialPlanner(**kwargs).fit(reference_firms())

    def test_fit_needs_firm_specs(self):
        with pytest.raises(TypeError):
            SocialPlanner().fit([1, 2])

    def test_unfitted(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            SocialPlanner().transform([0.5])

    def test_duopoly_result(self, duopoly):
        r = duopoly.result_
        assert r.aggregate == pytest.approx(r.assessment.sum())
        assert r.initial_aggregate == pytest.approx(7.36, abs=0.02)
        assert r.aggregate <= r.initial_aggregate + 1e-9
        assert np.all(np.diff(r.trace) <= 1e-12)
        assert duopoly.score(None) == pytest.approx(r.initial_aggregate - r.aggregate)
        assert r.summary()["aggregate"] == r.aggregate
        assert r.decision.violations(duopoly.problem_.w) == []

    def test_transform(self, duopoly):
        contracts = duopoly.transform([0.2, 0.9])
        assert contracts.shape == (2, 2, 14)
        w = np.full(14, 1 / 14)
        np.testing.assert_allclose(contracts @ w, 0.0, atol=1e-12)

    def test_monopoly_sandwich(self, duopoly, monopoly1, monopoly2):
        assert duopoly.aggregate_ <= min(monopoly1.aggregate_, monopoly2.aggregate_) + 0.05

    def test_frozen_tbr_stays_frozen(self, monopoly1):
        np.testing.assert_array_equal(monopoly1.result_.decision.tbr, 1.0)

    def test_tiny_instance_without_trade_gain(self):
        # identical endowments and a frozen TBR: the aggregate can only fall
        space = ProbSpace.uniform(3)
        firm = FirmSpec(space.claim([-1.0, 0.0, 1.0]), RiskMeasure.entropic(1.0))
        planner = SocialPlanner(type_lower=0.2, n_cells=2, max_iter=30).fit([firm, firm])
        r = planner.result_
        assert r.aggregate <= r.initial_aggregate + 1e-12
        assert np.all(np.diff(r.trace) <= 1e-12)

    def test_deterministic(self):
        firms = reference_firms()
        a = SocialPlanner(type_lower=0.1, max_iter=5).fit(firms)
        b = SocialPlanner(type_lower=0.1, max_iter=5).fit(firms)
        np.testing.assert_array_equal(a.decision_.to_flat(), b.decision_.to_flat())
        assert a.result_.trace == b.result_.trace

    @pytest.mark.slow
    def test_two_schedule_mode_not_worse_than_shared(self, avar_scenario, avar_fit):
        s = avar_scenario.with_solver(shared_schedule=False, max_iter=60)
        planner = planner_for(s).fit(s.firm_specs())
        assert planner.aggregate_ <= avar_fit.aggregate_ + 1e-12
        assert planner.aggregate_ <= 0.30
        assert np.all(np.diff(planner.result_.trace) <= 1e-12)

    @pytest.mark.slow
    def test_multi_start(self):
        planner = SocialPlanner(type_lower=0.1, max_iter=20, n_starts=2, seed=3).fit(reference_firms())
        single = SocialPlanner(type_lower=0.1, max_iter=20).fit(reference_firms())
        assert planner.aggregate_ <= single.aggregate_ + 1e-12
