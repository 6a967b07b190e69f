"""Two-stage stochastic electricity market clearing with risk-averse agents."""

__version__ = "0.1.0"

from .dispatch import DispatchSolution, InfeasibleError, solve_recourse, solve_slp
from .equilibrium import (EquilibriumCandidate, PriceField, best_response_generator, best_response_iso,
                          best_response_market_clearing, iterate_fixed_point, verify_equilibrium)
from .model import EmpiricalDistribution, MarketInstance, load_instance, pseudoinverse_cdf, validate_instance
from .newsvendor import closed_form_precommit, precommit_quantile
from .risk import PolyhedralRiskSet, RiskSpec, extreme_points, rho_disutility, worst_case_measure
from .riskmarket import EmptyIntersection, solve_raslp

__all__ = [
    "DispatchSolution", "EmpiricalDistribution", "EmptyIntersection", "EquilibriumCandidate", "InfeasibleError",
    "MarketInstance", "PolyhedralRiskSet", "PriceField", "RiskSpec", "best_response_generator",
    "best_response_iso", "best_response_market_clearing", "closed_form_precommit", "extreme_points",
    "iterate_fixed_point", "load_instance", "precommit_quantile", "pseudoinverse_cdf", "rho_disutility",
    "solve_raslp", "solve_recourse", "solve_slp", "validate_instance", "verify_equilibrium",
    "worst_case_measure",
]
