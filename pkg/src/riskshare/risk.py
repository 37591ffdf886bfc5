"""Law-invariant convex risk measures on finite probability spaces.

Two measures ship: the entropic risk measure
``rho(X) = (1/gamma) log E[exp(-gamma X)]`` and average value at risk, the
average of the worst ``lambda``-fraction of losses.  Both expose a value and a
subgradient with respect to the payoff vector, which is all the planner needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from riskshare.probability import Claim, DimensionError
from riskshare.validation import check_scalar

KINDS = ("entropic", "avar")


@dataclass(frozen=True)
class RiskMeasure:
    """Specification of a risk measure.

    Parameters
    ----------
    kind : {"entropic", "avar"}
    risk_aversion : float
        Entropic coefficient gamma > 0. Ignored for AV@R.
    tail_level : float
        AV@R level lambda in (0, 1]. Ignored for the entropic measure.
    """

    kind: str = "entropic"
    risk_aversion: float = 1.0
    tail_level: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown risk measure kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "entropic":
            check_scalar(self.risk_aversion, "risk_aversion", lo=0, lo_inclusive=False)
        else:
            check_scalar(self.tail_level, "tail_level", lo=0, hi=1, lo_inclusive=False)

    @classmethod
    def entropic(cls, risk_aversion: float) -> RiskMeasure:
        return cls("entropic", risk_aversion=risk_aversion)

    @classmethod
    def avar(cls, tail_level: float) -> RiskMeasure:
        return cls("avar", tail_level=tail_level)

    @property
    def coherent(self) -> bool:
        return self.kind == "avar"

    # array-level kernels used on hot paths
    def value(self, x: np.ndarray, w: np.ndarray) -> float:
        if self.kind == "entropic":
            g = self.risk_aversion
            s = -g * x
            top = s.max()
            return float((top + np.log(w @ np.exp(s - top))) / g)
        mass = _tail_mass(x, w, self.tail_level)
        return float(mass @ (-x) / self.tail_level)

    def gradient(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        if self.kind == "entropic":
            s = -self.risk_aversion * x
            s = s - s.max()
            q = w * np.exp(s)
            return -q / q.sum()
        return -_tail_mass(x, w, self.tail_level) / self.tail_level

    def describe(self) -> str:
        if self.kind == "entropic":
            return f"entropic(gamma={self.risk_aversion:g})"
        return f"avar(lambda={self.tail_level:g})"


def _tail_mass(x, w, level):
    """Probability mass each atom contributes to the worst ``level`` tail.

    Losses are taken in descending order with a stable sort, so among tied
    atoms the lower index is filled first.
    """
    order = np.argsort(x, kind="stable")
    before = np.concatenate(([0.0], np.cumsum(w[order])[:-1]))
    take = np.clip(level - before, 0.0, w[order])
    mass = np.empty_like(w)
    mass[order] = take
    return mass


def evaluate(measure: RiskMeasure, position: Claim) -> float:
    return measure.value(position.payoffs, position.space.atom_weights)


def subgradient(measure: RiskMeasure, position: Claim) -> Claim:
    """Subgradient ``d rho / d x_k`` as a claim on the same space."""
    g = measure.gradient(position.payoffs, position.space.atom_weights)
    return Claim(g, position.space)


# -- axiom battery -----------------------------------------------------------

CONVEX_WEIGHTS = (0.25, 0.5, 0.75)
CASH_SHIFTS = (-5.0, -1.0, 0.5, 5.0)
HOMOGENEITY_SCALES = (1.0, 1.5, 2.0, 3.0)


@dataclass
class Violation:
    axiom: str
    detail: str
    witness: tuple


@dataclass
class AxiomReport:
    measure: RiskMeasure
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def count(self, axiom):
        self.checks[axiom] = self.checks.get(axiom, 0) + 1

    def summary(self) -> str:
        lines = [f"axiom battery for {self.measure.describe()}"]
        for axiom, n in self.checks.items():
            bad = sum(v.axiom == axiom for v in self.violations)
            lines.append(f"  {axiom:<16} {n - bad}/{n} ok")
        return "\n".join(lines)


def _permutations(d, rng):
    perms = [np.arange(d)[::-1], np.roll(np.arange(d), 1)]
    perms.extend(rng.permutation(d) for _ in range(3))
    return perms


def axiom_battery(measure: RiskMeasure, samples, *, tol=1e-9, seed=0) -> AxiomReport:
    """Check the risk-measure axioms on sampled claims and report violations.

    Pairs are formed cyclically from consecutive samples.  Monotonicity is
    checked on ``(X, max(X, Y))`` so every pair is ordered.  Law invariance
    is only checked when the space is uniform, where atom permutations
    preserve the law.  Positive homogeneity is checked for coherent measures.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("axiom battery needs at least two samples")
    space = samples[0].space
    for s in samples:
        if s.space.atom_count != space.atom_count:
            raise DimensionError("all samples must share one probability space")
    w = space.atom_weights
    rho = lambda x: measure.value(x, w)  # noqa: E731
    rng = np.random.default_rng(seed)
    perms = _permutations(space.atom_count, rng) if space.is_uniform else []
    report = AxiomReport(measure)

    def check(axiom, ok, detail, witness):
        report.count(axiom)
        if not ok:
            report.violations.append(Violation(axiom, detail, witness))

    for x_claim, y_claim in zip(samples, samples[1:] + samples[:1]):
        x, y = x_claim.payoffs, y_claim.payoffs
        rx, ry = rho(x), rho(y)
        scale = tol * (1.0 + abs(rx) + abs(ry))

        upper = np.maximum(x, y)
        r_up = rho(upper)
        check("monotonicity", r_up <= rx + scale, f"rho(max(X,Y))={r_up} > rho(X)={rx}", (x, upper))

        for m in CASH_SHIFTS:
            r_m = rho(x + m)
            check("cash_invariance", abs(r_m - (rx - m)) <= scale + tol * abs(m),
                  f"rho(X+{m})={r_m} vs {rx - m}", (x, m))

        for t in CONVEX_WEIGHTS:
            mix = rho(t * x + (1 - t) * y)
            check("convexity", mix <= t * rx + (1 - t) * ry + scale,
                  f"rho(mix)={mix} > {t * rx + (1 - t) * ry}", (x, y, t))

        for p in perms:
            rp = rho(x[p])
            check("law_invariance", abs(rp - rx) <= scale, f"rho(X o perm)={rp} vs {rx}", (x, p))

        if measure.coherent:
            for t in HOMOGENEITY_SCALES:
                rt = rho(t * x)
                check("homogeneity", abs(rt - t * rx) <= scale * t,
                      f"rho({t}X)={rt} vs {t * rx}", (x, t))
    return report


def continuity_profile(measure: RiskMeasure, position: Claim, perturbation: Claim, steps=(1, 10, 100, 1000, 10000)):
    """``|rho(X + p/n) - rho(X)|`` along ``n in steps``; tends to zero on finite spaces."""
    base = evaluate(measure, position)
    return [abs(evaluate(measure, position + perturbation * (1.0 / n)) - base) for n in steps]

