"""Paired optimizer comparison over many seeded trials.

Every trial draws one initial parameter vector and solves the same instance
twice: once with the gradient-only path (BFGS inside the trust region) and
once with exact Hessians (Newton).  Per-trial ratios first-order/second-order
are formed before any aggregation; the summary reports their means and
(0.05, 0.95) quantiles.  Trials are independent, so they may run in parallel
worker processes; results are deterministic either way (timing columns
excepted).
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..controls import build_model
from ..optimizer import bfgs_baseline, newton_trust_region
from ..dynamics import propagate, target_violation
from .io import RunConfig, SystemFile, assemble_system
from .runner import _write_csv, make_qoc_problem

WORKERS_ENV = "QOCADJOINT_WORKERS"

METRICS = ("iterations", "wall_s", "final_cost", "grad_norm", "target_viol")

TRIALS_HEADER = ["trial", "algorithm", "iterations", "wall_s", "final_cost", "grad_norm", "target_viol"]


@dataclass(frozen=True)
class TrialResult:
    trial: int
    algorithm: str  # "bfgs" (first order) | "newton" (second order)
    iterations: int
    wall_s: float
    final_cost: float
    grad_norm: float
    target_viol: float
    termination_reason: str
    hessian_min_eig: float | None


def _run_trial(args) -> tuple[TrialResult, TrialResult]:
    trial_index, seed_seq, system_file, config = args
    system = assemble_system(system_file, config)
    model = build_model(config.model, num_steps=config.num_steps, num_channels=system.num_channels)
    theta0 = np.random.default_rng(seed_seq).standard_normal(model.num_params)
    problem = make_qoc_problem(
        system, model, batch_width=config.batch_width, memory_budget=config.memory_budget
    )

    results = []
    for algorithm, optimize in (("bfgs", bfgs_baseline), ("newton", newton_trust_region)):
        report = optimize(problem, theta0, criteria=config.criteria, config=config.trust_region)
        cache = propagate(system, model, report.final_theta)
        results.append(
            TrialResult(
                trial=trial_index,
                algorithm=algorithm,
                iterations=report.iterations,
                wall_s=report.wall_time,
                final_cost=report.final_cost,
                grad_norm=report.final_grad_norm,
                target_viol=target_violation(cache, system.beta),
                termination_reason=report.termination_reason,
                hessian_min_eig=report.final_hessian_min_eig,
            )
        )
    return results[0], results[1]


def _metric(result: TrialResult, name: str) -> float:
    return float(getattr(result, name))


def study(
    system_file: SystemFile,
    config: RunConfig,
    num_trials: int,
    out_dir=None,
    *,
    workers: int | None = None,
) -> dict:
    """Run the paired comparison and aggregate per-trial ratios.

    Returns the summary dict; when ``out_dir`` is given also writes
    trials.csv (raw rows, both optimizers per trial) and results.json.
    """
    if num_trials < 1:
        raise ValueError(f"num_trials must be >= 1, got {num_trials}")
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))

    seeds = np.random.SeedSequence(config.seed).spawn(num_trials)
    jobs = [(i, seeds[i], system_file, config) for i in range(num_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pairs = list(pool.map(_run_trial, jobs))
    else:
        pairs = [_run_trial(job) for job in jobs]

    ratios = {name: np.empty(num_trials) for name in METRICS}
    for i, (first_order, second_order) in enumerate(pairs):
        for name in ratios:
            denom = _metric(second_order, name)
            numer = _metric(first_order, name)
            ratios[name][i] = numer / denom if denom != 0 else np.inf

    summary = {
        "num_trials": num_trials,
        "seed": config.seed,
        "ratio_mean": {},
        "ratio_q05": {},
        "ratio_q95": {},
        "newton_within_cap": int(
            sum(p[1].iterations < config.criteria.max_iters for p in pairs)
        ),
        "bfgs_within_cap": int(
            sum(p[0].iterations < config.criteria.max_iters for p in pairs)
        ),
    }
    for name, values in ratios.items():
        finite = values[np.isfinite(values)]
        stats = finite if finite.size else values
        summary["ratio_mean"][name] = float(np.mean(stats))
        q05, q95 = np.quantile(stats, [0.05, 0.95])
        summary["ratio_q05"][name] = float(q05)
        summary["ratio_q95"][name] = float(q95)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = []
        for first_order, second_order in pairs:
            for result in (first_order, second_order):
                rows.append(
                    [
                        result.trial,
                        result.algorithm,
                        result.iterations,
                        result.wall_s,
                        result.final_cost,
                        result.grad_norm,
                        result.target_viol,
                    ]
                )
        _write_csv(out / "trials.csv", TRIALS_HEADER, rows)
        (out / "results.json").write_text(json.dumps(summary, indent=1) + "\n")

    summary["pairs"] = pairs
    return summary
