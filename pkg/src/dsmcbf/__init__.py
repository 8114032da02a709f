"""Control barrier functions built from Lyapunov dynamic safety margins.

The package provides the overhead-crane plant, Lyapunov DSMs with closed-form
thresholds, a small certified QP solver, the DSM-CBF / ERG / candidate-CBF
policies, a fixed-step simulator and a command-line front end.
"""
from ._backend import BACKEND
from .dynamics import CraneParams, PdGains
from .errors import (ConfigurationError, DsmCbfError, ModelDomainError, SafetyContractViolation,
                     SolverFailure)
from .lyapunov import ConstraintKind, ConstraintSpec, DsmSpec, LyapunovFn
from .qp import QpProblem, QpSolution, QpStatus, solve_qp
from .sim import ScenarioConfig, TrajectoryLog, run_scenario, scenario_a, scenario_b

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CraneParams", "PdGains", "ConfigurationError", "DsmCbfError", "ModelDomainError",
    "SafetyContractViolation", "SolverFailure", "ConstraintKind", "ConstraintSpec", "DsmSpec",
    "LyapunovFn", "QpProblem", "QpSolution", "QpStatus", "solve_qp", "ScenarioConfig",
    "TrajectoryLog", "run_scenario", "scenario_a", "scenario_b", "__version__",
]
