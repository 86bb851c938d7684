"""Option pricing by variational simulation of the discretised Black-Scholes equation."""

from .errors import DomainError, StabilityError, UnsupportedContractError
from .fdm import Grid, assemble_F, classical_price, euler_solve, solve_classical
from .market import (
    DerivativeContract,
    MarketModel,
    analytic_double_barrier_price,
    compute_t_ter,
    discretized_probabilities,
    monte_carlo_price,
)
from .pipeline import PricingJobConfig, PricingResult, __version__, run_algorithm1, sweep_prices
from .planner import MeasurementPlan, plan_measurements

__all__ = [
    "DerivativeContract",
    "DomainError",
    "Grid",
    "MarketModel",
    "MeasurementPlan",
    "PricingJobConfig",
    "PricingResult",
    "StabilityError",
    "UnsupportedContractError",
    "__version__",
    "analytic_double_barrier_price",
    "assemble_F",
    "classical_price",
    "compute_t_ter",
    "discretized_probabilities",
    "euler_solve",
    "monte_carlo_price",
    "plan_measurements",
    "run_algorithm1",
    "solve_classical",
    "sweep_prices",
]
