"""Risk-sensitive average-cost continuous-time MDPs on finite state spaces."""

from .average_solver import (
    EvalReport,
    SolveReport,
    brute_force_optimal,
    extract_policy,
    policy_value_risk_neutral,
    policy_value_spectral,
    solve,
)
from .first_passage import (
    FirstPassageSolution,
    QFactor,
    SolverError,
    first_passage_value,
    membership_in_G,
    optimal_first_passage,
    q_factor,
)
from .model import (
    CtmdpModel,
    DetPolicy,
    RandStationaryPolicy,
    ValidationReport,
    induced_generator,
    irreducible_under,
    load_model,
    validate_model,
)
from .simulator import (
    McEstimate,
    Trajectory,
    estimate_average_cost,
    estimate_first_passage,
    simulate_trajectory,
)

__version__ = "0.1.0"
