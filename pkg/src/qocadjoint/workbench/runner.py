"""Single-run drivers: optimization runs, derivative checks, artifact output."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..adjoint import (
    evaluate_gradient,
    evaluate_hessian,
    fd_gradient,
    fd_hessian,
    gradient_from_cache,
    hessian_from_cache,
)
from ..controls import ControlModel, build_model
from ..dynamics import (
    QuantumSystem,
    _assemble_cache,
    _decompose_all,
    _run_states,
    propagate,
    regularization,
    target_violation,
)
from ..optimizer import (
    OptimizationReport,
    Problem,
    bfgs_baseline,
    newton_trust_region,
)
from .io import RunConfig, SystemFile, assemble_system

GRAD_CHECK_TOL = 1e-6
HESS_CHECK_TOL = 1e-5


def make_qoc_problem(
    system: QuantumSystem,
    model: ControlModel,
    *,
    batch_width: int | None = None,
    memory_budget: int | None = None,
) -> Problem:
    """Fused evaluators over the adjoint engine.

    The step eigendecompositions of the most recent evaluation point are
    memoized, so a trial-point cost evaluation that gets accepted is not
    decomposed a second time by the follow-up gradient or Hessian pass.
    """
    kwargs = {"batch_width": batch_width}
    if memory_budget is not None:
        kwargs["memory_budget"] = memory_budget
    memo: dict = {"key": None}

    def decomposition(theta):
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        if memo["key"] != key:
            fields = model.values(theta)
            vals, vecs, props = _decompose_all(system, fields)
            states = _run_states(system, props)
            memo.update(key=key, fields=fields, parts=(vals, vecs, props, states))
        return memo

    def full_cache(theta):
        entry = decomposition(theta)
        if "cache" not in entry or entry["cache_key"] != entry["key"]:
            entry["cache"] = _assemble_cache(system, *entry["parts"])
            entry["cache_key"] = entry["key"]
        return entry["cache"]

    def cost_only(theta):
        entry = decomposition(theta)
        residual = entry["parts"][3][-1] - system.beta
        return regularization(entry["fields"]) + 0.5 * system.rho * float(
            np.linalg.norm(residual) ** 2
        )

    def cost_grad(theta):
        return gradient_from_cache(system, model, theta, full_cache(theta))

    def cost_grad_hess(theta):
        return hessian_from_cache(system, model, theta, full_cache(theta), **kwargs)

    return Problem(cost=cost_only, cost_grad=cost_grad, cost_grad_hess=cost_grad_hess)


def draw_theta(model: ControlModel, seed) -> np.ndarray:
    """Standard-normal initial parameters, deterministic per seed."""
    return np.random.default_rng(seed).standard_normal(model.num_params)


def _relative_inf(diff: np.ndarray, reference: np.ndarray) -> float:
    scale = float(np.max(np.abs(reference)))
    return float(np.max(np.abs(diff))) / max(scale, 1e-300)


@dataclass(frozen=True)
class DerivativeCheck:
    quantity: str
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def grad_check(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    tolerance: float = GRAD_CHECK_TOL,
) -> DerivativeCheck:
    """Adjoint gradient against the central-difference oracle."""
    _, adjoint_grad = evaluate_gradient(system, model, theta)
    oracle = fd_gradient(system, model, theta)
    err = _relative_inf(adjoint_grad - oracle, oracle)
    return DerivativeCheck("gradient", err, tolerance)


def hess_check(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    tolerance: float = HESS_CHECK_TOL,
) -> DerivativeCheck:
    """Adjoint Hessian against finite differences of the adjoint gradient."""
    _, _, adjoint_hess = evaluate_hessian(system, model, theta)
    oracle = fd_hessian(system, model, theta)
    oracle = 0.5 * (oracle + oracle.T)
    err = _relative_inf(adjoint_hess - oracle, oracle)
    return DerivativeCheck("hessian", err, tolerance)


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def write_control_series(path: Path, fields: np.ndarray, dt: float) -> None:
    """controls.csv: one row per step j with t = j*dt and every channel value."""
    num_steps, num_channels = fields.shape
    header = ["j", "t"] + [f"f{k + 1}" for k in range(num_channels)]
    rows = (
        [j, float(j * dt)] + [float(fields[j, k]) for k in range(num_channels)]
        for j in range(num_steps)
    )
    _write_csv(path, header, rows)


def write_state_series(path: Path, states: np.ndarray, dt: float) -> None:
    """states.csv: one row per time point (J+1 rows) with component magnitudes."""
    num_points, dim = states.shape
    header = ["j", "t"] + [f"mag{p + 1}" for p in range(dim)]
    rows = (
        [j, float(j * dt)] + [float(abs(states[j, p])) for p in range(dim)]
        for j in range(num_points)
    )
    _write_csv(path, header, rows)


def report_to_dict(report: OptimizationReport) -> dict:
    return {
        "iterations": report.iterations,
        "wall_time_s": report.wall_time,
        "termination_reason": report.termination_reason,
        "final_cost": report.final_cost,
        "final_grad_norm": report.final_grad_norm,
        "final_target_violation": report.final_target_violation,
        "final_hessian_min_eig": report.final_hessian_min_eig,
        "final_theta": [float(x) for x in report.final_theta],
        "trace": {
            "cost": [row.cost for row in report.trace],
            "grad_norm": [row.grad_norm for row in report.trace],
            "step_norm": [row.step_norm for row in report.trace],
            "trust_radius": [row.trust_radius for row in report.trace],
        },
    }


def run_optimization(
    system_file: SystemFile,
    config: RunConfig,
    out_dir,
    *,
    seed: int | None = None,
) -> OptimizationReport:
    """Optimize one instance and emit results.json, controls.csv, states.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = assemble_system(system_file, config)
    model = build_model(config.model, num_steps=config.num_steps, num_channels=system.num_channels)
    problem = make_qoc_problem(
        system, model, batch_width=config.batch_width, memory_budget=config.memory_budget
    )
    theta0 = draw_theta(model, config.seed if seed is None else seed)

    optimize = newton_trust_region if config.optimizer == "newton" else bfgs_baseline
    report = optimize(problem, theta0, criteria=config.criteria, config=config.trust_region)

    cache = propagate(system, model, report.final_theta)
    report.final_target_violation = target_violation(cache, system.beta)

    payload = report_to_dict(report)
    payload["optimizer"] = config.optimizer
    payload["system"] = {
        "name": system_file.name,
        "dim": system_file.dim,
        "num_channels": system_file.num_channels,
    }
    payload["config"] = config.to_dict()
    (out / "results.json").write_text(json.dumps(payload, indent=1) + "\n")

    write_control_series(out / "controls.csv", model.values(report.final_theta), config.dt)
    write_state_series(out / "states.csv", cache.states, config.dt)
    return report


def run_derivative_check(
    kind: str,
    system_file: SystemFile,
    config: RunConfig,
    out_dir,
    *,
    seed: int | None = None,
) -> DerivativeCheck:
    """CLI backend for grad-check / hess-check; writes a small JSON report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = assemble_system(system_file, config)
    model = build_model(config.model, num_steps=config.num_steps, num_channels=system.num_channels)
    theta = draw_theta(model, config.seed if seed is None else seed)
    check = grad_check(system, model, theta) if kind == "gradient" else hess_check(system, model, theta)
    (out / f"{kind}_check.json").write_text(
        json.dumps(
            {
                "quantity": check.quantity,
                "max_relative_error": check.max_relative_error,
                "tolerance": check.tolerance,
                "passed": check.passed,
            },
            indent=1,
        )
        + "\n"
    )
    return check


def run_propagation(
    system_file: SystemFile,
    config: RunConfig,
    out_dir,
    *,
    seed: int | None = None,
    zero_controls: bool = False,
) -> dict:
    """Forward-propagate once and emit the control/state series plus a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    system = assemble_system(system_file, config)
    model = build_model(config.model, num_steps=config.num_steps, num_channels=system.num_channels)
    if zero_controls:
        theta = np.zeros(model.num_params)
    else:
        theta = draw_theta(model, config.seed if seed is None else seed)
    cache = propagate(system, model, theta)
    norms = np.linalg.norm(cache.states, axis=1)
    summary = {
        "num_steps": config.num_steps,
        "max_norm_drift": float(np.max(np.abs(norms - 1.0))),
        "target_violation": target_violation(cache, system.beta),
    }
    (out / "propagate.json").write_text(json.dumps(summary, indent=1) + "\n")
    write_control_series(out / "controls.csv", model.values(theta), config.dt)
    write_state_series(out / "states.csv", cache.states, config.dt)
    return summary
