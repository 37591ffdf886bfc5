"""Risk sharing between risk-minimizing firms and mean-variance agents."""

from riskshare.game import (
    Catalogue,
    CatalogueGrid,
    MixedNashSolver,
    MixedProfile,
    mixed_nash,
    payoff,
    per_type_profit,
)
from riskshare.market import (
    MarketSegmentation,
    TieBreakRule,
    UtilitySchedule,
    envelope_check,
    firm_income,
    price_schedule,
    reconstruct_v,
    segment_market,
)
from riskshare.planner import FirmSpec, PlannerResult, SocialPlanner
from riskshare.probability import Claim, ProbSpace, TypeGrid, mean, mv_utility, variance
from riskshare.risk import RiskMeasure, axiom_battery, evaluate, subgradient

__version__ = "0.1.0"

__all__ = [
    "Catalogue",
    "CatalogueGrid",
    "Claim",
    "FirmSpec",
    "MarketSegmentation",
    "MixedNashSolver",
    "MixedProfile",
    "PlannerResult",
    "ProbSpace",
    "RiskMeasure",
    "SocialPlanner",
    "TieBreakRule",
    "TypeGrid",
    "UtilitySchedule",
    "axiom_battery",
    "envelope_check",
    "evaluate",
    "firm_income",
    "mean",
    "mixed_nash",
    "mv_utility",
    "payoff",
    "per_type_profit",
    "price_schedule",
    "reconstruct_v",
    "segment_market",
    "subgradient",
    "variance",
]
