"""Wall-time scaling of the first- and second-order derivative passes.

For each (N, J) cell the timed unit is one complete pass: forward propagation
with caching plus the costate sweep and gradient contraction (first order),
or all of that plus the sensitivity/mu sweeps and Hessian assembly (second
order).  Each cell runs one untimed warm-up followed by ``trials`` timed
repetitions, strictly sequentially so timings never fight each other for
cores, and reports an OLS slope of log2(mean time) versus log2(J) per
dimension and algorithm.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..adjoint import evaluate_gradient, evaluate_hessian
from ..controls import build_model
from .io import RunConfig, SystemFile, assemble_system
from .runner import draw_theta, _write_csv
from .synth import generate_synthetic

ALGORITHMS = ("first_order", "second_order")


@dataclass(frozen=True)
class BenchRecord:
    dim: int
    num_steps: int
    algorithm: str
    trials: int
    mean_seconds: float
    std_seconds: float


def _time_pass(func, repeats: int) -> tuple[float, float]:
    func()  # warm-up, untimed
    samples = np.empty(repeats)
    for i in range(repeats):
        start = time.perf_counter()
        func()
        samples[i] = time.perf_counter() - start
    return float(samples.mean()), float(samples.std())


def bench_scaling(
    dims,
    step_counts,
    trials: int,
    seed: int,
    *,
    dt: float = 0.1,
    rho: float = 1.0,
    num_channels: int = 1,
    system_file: SystemFile | None = None,
) -> tuple[list[BenchRecord], dict[tuple[int, str], float]]:
    """Time both passes over the (dims x step_counts) grid.

    With ``system_file`` given, its matrices are reused at every J and
    ``dims`` is ignored.  Returns the records plus OLS log-log slopes keyed by
    (dim, algorithm).
    """
    if trials < 3:
        raise ValueError(f"need at least 3 trials for a spread estimate, got {trials}")
    dims = [system_file.dim] if system_file is not None else list(dims)
    step_counts = list(step_counts)
    records: list[BenchRecord] = []
    rng = np.random.default_rng(seed)
    for dim in dims:
        base = system_file if system_file is not None else generate_synthetic(
            dim, num_channels, seed=int(rng.integers(2**63))
        )
        for num_steps in step_counts:
            config = RunConfig(rho=rho, dt=dt, num_steps=num_steps, seed=seed)
            system = assemble_system(base, config)
            model = build_model("maximal", num_steps=num_steps, num_channels=base.num_channels)
            theta = draw_theta(model, int(rng.integers(2**63)))
            mean, std = _time_pass(lambda: evaluate_gradient(system, model, theta), trials)
            records.append(BenchRecord(dim, num_steps, "first_order", trials, mean, std))
            mean, std = _time_pass(lambda: evaluate_hessian(system, model, theta), trials)
            records.append(BenchRecord(dim, num_steps, "second_order", trials, mean, std))
    return records, fit_slopes(records)


def fit_slopes(records: list[BenchRecord]) -> dict[tuple[int, str], float]:
    """OLS slope of log2(mean seconds) vs log2(J) per (dim, algorithm)."""
    slopes: dict[tuple[int, str], float] = {}
    dims = sorted({r.dim for r in records})
    for dim in dims:
        for algorithm in ALGORITHMS:
            cells = [r for r in records if r.dim == dim and r.algorithm == algorithm]
            if len(cells) < 2:
                continue
            x = np.log2([r.num_steps for r in cells])
            y = np.log2([r.mean_seconds for r in cells])
            slopes[(dim, algorithm)] = float(np.polyfit(x, y, 1)[0])
    return slopes


def write_bench_csv(records: list[BenchRecord], path) -> None:
    _write_csv(
        Path(path),
        ["N", "J", "algorithm", "trials", "mean_seconds", "std_seconds"],
        (
            [r.dim, r.num_steps, r.algorithm, r.trials, r.mean_seconds, r.std_seconds]
            for r in records
        ),
    )


def write_bench_summary(slopes: dict[tuple[int, str], float], path) -> None:
    payload = [
        {"N": dim, "algorithm": algorithm, "loglog_slope": slope}
        for (dim, algorithm), slope in sorted(slopes.items())
    ]
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")
