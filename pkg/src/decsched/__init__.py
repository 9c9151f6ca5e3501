"""Decentralized scheduling of intrusion sensors and honeypots.

Models the joint scheduling problem as a flat finite DEC-POMDP, optimizes
per-agent stochastic finite-state controllers under the long-run average
reward criterion, and validates solutions with an exact chain-based
evaluator, a brute-force deterministic oracle, and a Monte Carlo
simulator.
"""

from .controller import (
    ConsistencyError,
    FscPolicy,
    ProductVars,
    from_product,
    load_policy,
    random_policy,
    sample_step,
    save_policy,
    to_product,
)
from .evaluate import (
    MULTICHAIN,
    UNICHAIN,
    DataError,
    EvalReport,
    OccupancyMeasure,
    SearchSpaceError,
    average_reward,
    enumerate_deterministic,
    induced_chain,
    occupancy_measure,
    stationary_distribution,
)
from .model import (
    DecPomdp,
    JointActionIndex,
    ValidationReport,
    load_model,
    obs_prob,
    reward,
    save_model,
    transition_prob,
    validate,
)
from .scenario import ConfigurationError, DeviceSpec, RewardWeights, ScenarioConfig
from .sim import SimConfig, SimTrace, run, step, write_trace_csv
from .solver import (
    SolveConfig,
    SolveResult,
    best_response_sweep,
    gradient,
    gradient_fd,
    objective,
    solve,
)

__all__ = [
    "MULTICHAIN",
    "UNICHAIN",
    "ConfigurationError",
    "ConsistencyError",
    "DataError",
    "DecPomdp",
    "DeviceSpec",
    "EvalReport",
    "FscPolicy",
    "JointActionIndex",
    "OccupancyMeasure",
    "ProductVars",
    "RewardWeights",
    "ScenarioConfig",
    "SearchSpaceError",
    "SimConfig",
    "SimTrace",
    "SolveConfig",
    "SolveResult",
    "ValidationReport",
    "average_reward",
    "best_response_sweep",
    "enumerate_deterministic",
    "from_product",
    "gradient",
    "gradient_fd",
    "induced_chain",
    "load_model",
    "load_policy",
    "objective",
    "obs_prob",
    "occupancy_measure",
    "random_policy",
    "reward",
    "run",
    "sample_step",
    "save_model",
    "save_policy",
    "solve",
    "stationary_distribution",
    "step",
    "to_product",
    "transition_prob",
    "validate",
    "write_trace_csv",
]

__version__ = "0.1.0"
