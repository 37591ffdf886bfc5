import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from riskshare.probability import ProbSpace, mean, variance
from riskshare.risk import RiskMeasure, axiom_battery, evaluate, subgradient
from riskshare.risk import continuity_profile

# Reference values from an independent 30-digit log-sum-exp evaluation.
ENTROPIC_W1 = 3.52992189276451155
ENTROPIC_W2 = 3.83800936983536321
# Tail average of the worst 10% of the second AV@R endowment on 14 equal atoms.
AVAR_W2 = (0.5 / 14 + 0.45 * (0.1 - 1 / 14)) / 0.1

MEASURES = [RiskMeasure.entropic(2.0), RiskMeasure.entropic(0.3), RiskMeasure.avar(0.3), RiskMeasure.avar(0.05)]

claims8 = arrays(np.float64, 8, elements=st.floats(-5, 5, allow_nan=False))


def central_difference(measure, x, w, h=1e-6):
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (measure.value(x + e, w) - measure.value(x - e, w)) / (2 * h)
    return out


class TestSpecification:
    @pytest.mark.parametrize("kwargs", [{"kind": "var"}, {"kind": "entropic", "risk_aversion": 0.0},
                                        {"kind": "avar", "tail_level": 0.0}, {"kind": "avar", "tail_level": 1.2}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            RiskMeasure(**kwargs)

    def test_coherence_flag(self):
        assert RiskMeasure.avar(0.1).coherent
        assert not RiskMeasure.entropic(1.0).coherent

    def test_describe(self):
        assert RiskMeasure.entropic(2).describe() == "entropic(gamma=2)"
        assert RiskMeasure.avar(0.1).describe() == "avar(lambda=0.1)"


class TestEvaluate:
    def test_reference_endowments(self, entropic_firms):
        w1, w2 = (f.endowment for f in entropic_firms)
        assert evaluate(RiskMeasure.entropic(2.0), w1) == pytest.approx(ENTROPIC_W1, abs=1e-12)
        assert evaluate(RiskMeasure.entropic(2.0), w2) == pytest.approx(ENTROPIC_W2, abs=1e-12)
        assert evaluate(RiskMeasure.entropic(2.0), w1) == pytest.approx(3.53, abs=0.01)

    def test_avar_reference(self, avar_firms):
        w1, w2 = (f.endowment for f in avar_firms)
        assert evaluate(RiskMeasure.avar(0.1), w2) == pytest.approx(AVAR_W2, abs=1e-12)
        assert AVAR_W2 == pytest.approx(0.486, abs=1e-3)
        # a level below one atom's mass returns the worst loss
        assert evaluate(RiskMeasure.avar(0.05), w1) == pytest.approx(0.2, abs=1e-15)

    @pytest.mark.parametrize("gamma", [0.01, 1.0, 50.0])
    def test_entropic_zero_claim(self, gamma):
        assert evaluate(RiskMeasure.entropic(gamma), ProbSpace.uniform(5).claim(np.zeros(5))) == 0.0

    def test_avar_full_level_is_expected_loss(self, rng):
        claim = ProbSpace.uniform(7).claim(rng.normal(size=7))
        assert evaluate(RiskMeasure.avar(1.0), claim) == pytest.approx(-mean(claim), abs=1e-14)

    def test_avar_nonuniform_weights(self):
        space = ProbSpace(np.array([0.1, 0.2, 0.7]))
        claim = space.claim([-3.0, -1.0, 2.0])
        # worst 25%: all of atom 0 (0.1) and 0.15 of atom 1
        assert evaluate(RiskMeasure.avar(0.25), claim) == pytest.approx((0.3 + 0.15) / 0.25)

    def test_cash_shift_of_zero(self):
        zero = ProbSpace.uniform(3).claim(np.zeros(3))
        for m in MEASURES:
            assert evaluate(m, zero + 5.0) == pytest.approx(-5.0)

    def test_entropic_no_overflow(self):
        claim = ProbSpace.uniform(2).claim([-700.0, 700.0])
        assert np.isfinite(evaluate(RiskMeasure.entropic(1.0), claim))

    @given(claims8, st.floats(1e-4, 1e-2))
    def test_small_risk_aversion_limit(self, x, gamma):
        claim = ProbSpace.uniform(8).claim(x)
        gap = abs(evaluate(RiskMeasure.entropic(gamma), claim) + mean(claim))
        assert gap <= gamma * variance(claim) + 1e-10


class TestSubgradient:
    def test_entropic_constant(self):
        space = ProbSpace.uniform(4)
        g = subgradient(RiskMeasure.entropic(2.0), space.claim(np.full(4, 3.0)))
        np.testing.assert_allclose(g.payoffs, -space.atom_weights)

    def test_avar_full_level(self, rng):
        space = ProbSpace(np.array([0.2, 0.3, 0.5]))
        g = subgradient(RiskMeasure.avar(1.0), space.claim(rng.normal(size=3)))
        np.testing.assert_allclose(g.payoffs, -space.atom_weights)

    def test_avar_tie_selection_is_left(self):
        space = ProbSpace.uniform(4)
        g = subgradient(RiskMeasure.avar(0.25), space.claim([-1.0, -1.0, 0.0, 1.0]))
        np.testing.assert_allclose(g.payoffs, [-1.0, 0.0, 0.0, 0.0])

    def test_entropic_reference_fd(self, entropic_firms):
        w1 = entropic_firms[0].endowment
        m = RiskMeasure.entropic(2.0)
        fd = central_difference(m, w1.payoffs, w1.space.atom_weights)
        g = subgradient(m, w1).payoffs
        assert np.max(np.abs(g - fd)) <= 1e-6 * np.max(np.abs(fd))

    @given(claims8, st.sampled_from(MEASURES))
    @settings(max_examples=200)
    def test_matches_finite_differences(self, x, measure):
        w = np.full(8, 1 / 8)
        if measure.kind == "avar":
            # stay away from loss ties, where AV@R is not differentiable
            gaps = np.diff(np.sort(x))
            if gaps.size and gaps.min() < 1e-3:
                x = x + np.arange(8) * 1e-2
        fd = central_difference(measure, x, w)
        g = measure.gradient(x, w)
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))

    @given(claims8, st.sampled_from(MEASURES))
    def test_gradient_is_a_negative_probability(self, x, measure):
        g = measure.gradient(x, np.full(8, 1 / 8))
        assert np.all(g <= 0)
        assert g.sum() == pytest.approx(-1.0)


class TestAxioms:
    @pytest.mark.parametrize("measure", MEASURES, ids=lambda m: m.describe())
    def test_battery_on_500_claims(self, measure):
        rng = np.random.default_rng(7)
        space = ProbSpace.uniform(10)
        samples = [space.claim(rng.normal(0, rng.uniform(0.1, 5), 10)) for _ in range(500)]
        report = axiom_battery(measure, samples)
        assert report.passed, report.summary()
        assert report.checks["monotonicity"] == 500
        assert ("homogeneity" in report.checks) == measure.coherent

    def test_law_invariance_skipped_on_nonuniform_space(self, rng):
        space = ProbSpace(np.array([0.1, 0.2, 0.7]))
        samples = [space.claim(rng.normal(size=3)) for _ in range(10)]
        assert "law_invariance" not in axiom_battery(RiskMeasure.entropic(1.0), samples).checks

    def test_detects_a_broken_measure(self, rng):
        class Broken(RiskMeasure):
            def value(self, x, w):
                return float(w @ x)  # expected gain rather than loss: not monotone

        space = ProbSpace.uniform(5)
        samples = [space.claim(rng.normal(size=5)) for _ in range(20)]
        report = axiom_battery(Broken("entropic"), samples)
        assert not report.passed
        assert {v.axiom for v in report.violations} >= {"monotonicity", "cash_invariance"}

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            axiom_battery(RiskMeasure.entropic(1.0), [ProbSpace.uniform(2).claim([0.0, 1.0])])

    @pytest.mark.parametrize("measure", MEASURES, ids=lambda m: m.describe())
    def test_continuity_profile_vanishes(self, measure, entropic_firms):
        w1 = entropic_firms[0].endowment
        perturbation = w1.space.claim(np.sin(np.arange(14.0)))
        profile = continuity_profile(measure, w1, perturbation)
        assert profile[-1] < 1e-3
        assert all(b <= a + 1e-12 for a, b in zip(profile, profile[1:]))
