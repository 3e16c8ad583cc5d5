"""Lyapunov state feedback that drives Markovian open quantum systems into
decoherence-free subspaces.

The package integrates the controlled master equation with fields synthesized
from the instantaneous state, verifies candidate decoherence-free subspaces,
and ships a four-level-atom example plus a CLI for single runs, initial-state
sweeps, decay scans and control-vs-decay comparisons.
"""

from .backend import default_backend, have_kernel
from .control import (
    ControlConfig,
    FieldSample,
    LyapunovController,
    lasalle_residuals,
    lyapunov_v,
    lyapunov_vb,
    propagate_target,
    synthesize_fields,
    synthesize_fields_basis,
)
from .core import (
    DensityMatrix,
    DensityValidationReport,
    DimensionMismatchError,
    PureState,
    StateValidationError,
    commutator,
    expectation,
    validate_density,
)
from .dfs import DfsReport, TargetSubspace, gamma_operator, subspace_probability, verify_dfs
from .fourlevel import (
    BASIS_LABELS,
    FourLevelParams,
    InitialStateAngles,
    build_model,
    dark_states,
    initial_state,
)
from .lindblad import (
    LindbladModel,
    Trajectory,
    TrajectoryValidationError,
    dissipator,
    evolve,
    lindblad_rhs,
    rk4_step,
)

__version__ = "0.1.0"

__all__ = [
    "BASIS_LABELS",
    "ControlConfig",
    "DensityMatrix",
    "DensityValidationReport",
    "DfsReport",
    "DimensionMismatchError",
    "FieldSample",
    "FourLevelParams",
    "InitialStateAngles",
    "LindbladModel",
    "LyapunovController",
    "PureState",
    "StateValidationError",
    "TargetSubspace",
    "Trajectory",
    "TrajectoryValidationError",
    "build_model",
    "commutator",
    "dark_states",
    "default_backend",
    "dissipator",
    "evolve",
    "expectation",
    "gamma_operator",
    "have_kernel",
    "initial_state",
    "lasalle_residuals",
    "lindblad_rhs",
    "lyapunov_v",
    "lyapunov_vb",
    "propagate_target",
    "rk4_step",
    "subspace_probability",
    "synthesize_fields",
    "synthesize_fields_basis",
    "validate_density",
    "verify_dfs",
]
