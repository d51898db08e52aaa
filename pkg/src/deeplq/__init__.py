"""Risk-sensitive linear-quadratic control of large structured teams.

The package solves team-optimal control problems where many agents are
coupled through influence-weighted empirical averages (deep states). The
backward sweep runs on the low-dimensional deep Riccati equation instead of
the joint state, and the resulting strategies are validated against a
brute-force centralized oracle on small instances.
"""

from deeplq.deep_riccati import (
    DeepRiccatiSolution,
    FiniteEscapeError,
    StationarySolution,
    compute_value_constants,
    solve_algebraic,
    solve_all,
    solve_correction_terms,
    solve_deep_riccati,
    solve_weakly_coupled,
    time_grid,
)
from deeplq.model import (
    InitSpec,
    Schedule,
    SubPopulation,
    TeamModel,
    assemble_centralized,
    assemble_population_matrices,
    constant,
    deep_state,
    gauge_decompose,
    infinite_population_limit,
    piecewise,
    validate_model,
    with_population_size,
    zero_coupling,
)
from deeplq.scenarios import builtin_supply_chain, get_scenario, random_team_model
from deeplq.simulator import (
    ExperimentReport,
    Trajectory,
    centralized_oracle_gains,
    estimate_risk_sensitive_cost,
    evaluate_cost,
    price_of_information,
    price_of_robustness,
    sample_costs,
    simulate,
    write_trajectory_csv,
)
from deeplq.strategies import (
    CentralizedStrategy,
    DssStrategy,
    NetworkExport,
    PdssStrategy,
    ZeroStrategy,
    dss_action,
    dss_joint_gain,
    export_network_weights,
    forward_pass,
)

__version__ = "0.1.0"

__all__ = [
    "CentralizedStrategy",
    "DeepRiccatiSolution",
    "DssStrategy",
    "ExperimentReport",
    "FiniteEscapeError",
    "InitSpec",
    "NetworkExport",
    "PdssStrategy",
    "Schedule",
    "StationarySolution",
    "SubPopulation",
    "TeamModel",
    "Trajectory",
    "ZeroStrategy",
    "assemble_centralized",
    "assemble_population_matrices",
    "builtin_supply_chain",
    "centralized_oracle_gains",
    "compute_value_constants",
    "constant",
    "deep_state",
    "dss_action",
    "dss_joint_gain",
    "estimate_risk_sensitive_cost",
    "evaluate_cost",
    "export_network_weights",
    "forward_pass",
    "gauge_decompose",
    "get_scenario",
    "infinite_population_limit",
    "piecewise",
    "price_of_information",
    "price_of_robustness",
    "random_team_model",
    "sample_costs",
    "simulate",
    "solve_algebraic",
    "solve_all",
    "solve_correction_terms",
    "solve_deep_riccati",
    "solve_weakly_coupled",
    "time_grid",
    "validate_model",
    "with_population_size",
    "write_trajectory_csv",
    "zero_coupling",
    "__version__",
]
