"""Weak antithetic multilevel Monte Carlo for SDEs.

Milstein stepping without Levy areas, binomially coupled discrete Wiener
increments and exact enumeration of the coarsest level.
"""

from .engine import (
    ConvergenceError,
    EstimatorVariant,
    LevelStats,
    MlmcConfig,
    MlmcEstimate,
    allocate_paths,
    fit_slope,
    level0_samples,
    level_correction_samples,
    pilot_select_levels,
    run_mlmc,
)
from .enumeration import (
    EnumerationBudgetExceeded,
    EnumerationResult,
    OutcomeLattice,
    enumerate_level0,
    outcome_count,
    outcome_probability,
)
from .increments import (
    IncrementDistribution,
    IncrementKind,
    LevelIncrements,
    binomial_pmf,
    sample_binomial,
    sample_fine,
)
from .models import BasketModelParams, basket_model, basket_payoff, gbm_model, linear_sde
from .sde import (
    SchemeKind,
    SdeModel,
    SimulationFault,
    antithetic_increments,
    euler_step,
    milstein_step_no_levy,
    simulate_path,
)
from .streams import RandomStreams

__version__ = "0.1.0"
