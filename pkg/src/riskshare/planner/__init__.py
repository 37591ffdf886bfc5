"""The social planner's risk-minimization program and its solver."""

from riskshare.planner.analysis import (
    collinearity_check,
    entropic_fixed_point_residual,
    extract_fix_mix,
    transfer_sea,
)
from riskshare.planner.lp import InfeasibleStep, LinearConstraint, feasibility_repair, lp_trust_region
from riskshare.planner.objective import Assessment, DecisionVector, FirmSpec, Problem, assemble_objective
from riskshare.planner.solver import PlannerResult, SocialPlanner

__all__ = [
    "Assessment",
    "DecisionVector",
    "FirmSpec",
    "InfeasibleStep",
    "LinearConstraint",
    "PlannerResult",
    "Problem",
    "SocialPlanner",
    "assemble_objective",
    "collinearity_check",
    "entropic_fixed_point_residual",
    "extract_fix_mix",
    "feasibility_repair",
    "lp_trust_region",
    "transfer_sea",
]
