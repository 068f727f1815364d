"""Exact-derivative workbench for discrete-time quantum optimal control.

Library layers: spectral exponential kernels, control parameterizations,
forward dynamics, adjoint gradient/Hessian sweeps, a trust-region optimizer
pair (exact Newton vs damped BFGS), and a file/CLI workbench on top.
"""

from .adjoint import (
    DEFAULT_MEMORY_BUDGET,
    MemoryBudgetError,
    SensitivityBlock,
    costate_sweep,
    evaluate_gradient,
    evaluate_hessian,
    fd_gradient,
    fd_hessian,
    gradient,
    hessian,
    mu_sweep,
    sensitivity_sweep,
)
from .controls import (
    ControlIndexError,
    ControlModel,
    MaximalModel,
    available_models,
    build_model,
    check_model_consistency,
    register_model,
)
from .dynamics import (
    PropagationError,
    QuantumSystem,
    TrajectoryCache,
    build_generator,
    cost,
    propagate,
    propagate_states,
    target_violation,
)
from .optimizer import (
    EvaluationError,
    OptimizationReport,
    Problem,
    TerminationCriteria,
    TrustRegionConfig,
    bfgs_baseline,
    newton_trust_region,
    problem_from_callables,
    trust_region_subproblem,
)
from .spectral import (
    EigendecompositionError,
    LoewnerTable,
    SpectralFactor,
    decompose,
    frechet_first,
    frechet_second,
    loewner_table,
    second_frechet_forms,
    step_propagator,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_MEMORY_BUDGET",
    "ControlIndexError",
    "ControlModel",
    "EigendecompositionError",
    "EvaluationError",
    "LoewnerTable",
    "MaximalModel",
    "MemoryBudgetError",
    "OptimizationReport",
    "Problem",
    "PropagationError",
    "QuantumSystem",
    "SensitivityBlock",
    "SpectralFactor",
    "TerminationCriteria",
    "TrajectoryCache",
    "TrustRegionConfig",
    "available_models",
    "bfgs_baseline",
    "build_generator",
    "build_model",
    "check_model_consistency",
    "cost",
    "costate_sweep",
    "decompose",
    "evaluate_gradient",
    "evaluate_hessian",
    "fd_gradient",
    "fd_hessian",
    "frechet_first",
    "frechet_second",
    "gradient",
    "hessian",
    "loewner_table",
    "mu_sweep",
    "newton_trust_region",
    "problem_from_callables",
    "propagate",
    "propagate_states",
    "register_model",
    "second_frechet_forms",
    "sensitivity_sweep",
    "step_propagator",
    "target_violation",
    "trust_region_subproblem",
]
