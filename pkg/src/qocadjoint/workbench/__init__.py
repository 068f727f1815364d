"""File formats, synthetic instances, run drivers, benchmarks and the CLI."""

from .bench import BenchRecord, bench_scaling, fit_slopes, write_bench_csv
from .io import (
    RunConfig,
    SystemFile,
    assemble_system,
    load_config,
    load_system,
    save_config,
    save_system,
)
from .runner import (
    DerivativeCheck,
    draw_theta,
    grad_check,
    hess_check,
    make_qoc_problem,
    run_optimization,
    run_propagation,
)
from .study import study
from .synth import generate_synthetic

__all__ = [
    "BenchRecord",
    "DerivativeCheck",
    "RunConfig",
    "SystemFile",
    "assemble_system",
    "bench_scaling",
    "draw_theta",
    "fit_slopes",
    "generate_synthetic",
    "grad_check",
    "hess_check",
    "load_config",
    "load_system",
    "make_qoc_problem",
    "run_optimization",
    "run_propagation",
    "save_config",
    "save_system",
    "study",
    "write_bench_csv",
]
