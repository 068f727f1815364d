"""Trust-region minimization with exact Hessians or a damped-BFGS surrogate.

Both optimizer paths share one shell: the same subproblem solver, acceptance
rule, radius schedule and termination tests, so their iteration counts are
directly comparable.  The Newton path consumes exact Hessians; the
quasi-Newton path maintains a Powell-damped BFGS approximation built from
gradient pairs and never touches second derivatives.

The subproblem min g.s + 0.5 s.H.s over ||s|| <= radius is solved exactly
(More-Sorensen style) through the dense eigendecomposition of H, including
the hard case; problem sizes here stay small enough that the factorization
is cheap and is reused across rejected steps.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

# Conn-Gould-Toint style radius schedule constants.
ACCEPT_RATIO = 1e-4
SHRINK_RATIO = 0.25
EXPAND_RATIO = 0.75
SHRINK_FACTOR = 0.25
EXPAND_FACTOR = 2.0
BOUNDARY_FRACTION = 0.99
BFGS_DAMPING = 0.2


class EvaluationError(RuntimeError):
    """An objective evaluator returned a non-finite value."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class TerminationCriteria:
    """Stop when an accepted step (or the radius) drops below step_tol, the
    gradient norm drops below grad_tol, or max_iters is reached."""

    step_tol: float = 1e-10
    grad_tol: float = 1e-10
    max_iters: int = 10_000

    def __post_init__(self):
        if not self.step_tol > 0:
            raise ValueError(f"step_tol must be positive, got {self.step_tol}")
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class TrustRegionConfig:
    initial_radius: float = 1.0
    max_radius: float = float("inf")
    accept_ratio: float = ACCEPT_RATIO
    shrink_ratio: float = SHRINK_RATIO
    expand_ratio: float = EXPAND_RATIO
    shrink_factor: float = SHRINK_FACTOR
    expand_factor: float = EXPAND_FACTOR

    def __post_init__(self):
        if not self.initial_radius > 0:
            raise ValueError("initial_radius must be positive")
        if not 0 < self.shrink_factor < 1 < self.expand_factor:
            raise ValueError("need shrink_factor < 1 < expand_factor")


@dataclass(frozen=True)
class TraceRow:
    cost: float
    grad_norm: float
    step_norm: float
    trust_radius: float


@dataclass
class OptimizationReport:
    iterations: int
    wall_time: float
    trace: list[TraceRow]
    final_theta: np.ndarray
    termination_reason: str  # step_tol | grad_tol | max_iters
    final_cost: float
    final_grad_norm: float
    final_hessian_min_eig: float | None = None
    final_target_violation: float | None = None


@dataclass(frozen=True)
class Problem:
    """Objective evaluators; fused forms avoid redundant forward passes."""

    cost: Callable[[np.ndarray], float]
    cost_grad: Callable[[np.ndarray], tuple[float, np.ndarray]]
    cost_grad_hess: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]] | None = None


def problem_from_callables(cost, grad, hess=None) -> Problem:
    """Wrap separate cost/grad/hess callables into the fused interface."""

    def cost_grad(theta):
        return cost(theta), np.asarray(grad(theta), dtype=float)

    cost_grad_hess = None
    if hess is not None:

        def cost_grad_hess(theta):
            return (
                cost(theta),
                np.asarray(grad(theta), dtype=float),
                np.asarray(hess(theta), dtype=float),
            )

    return Problem(cost=cost, cost_grad=cost_grad, cost_grad_hess=cost_grad_hess)


# -- trust-region subproblem --------------------------------------------------

_NULL_TOL = 1e-12


def _solve_factored(evals: np.ndarray, basis: np.ndarray, grad: np.ndarray, radius: float) -> np.ndarray:
    """Exact subproblem step given H = basis diag(evals) basis^T."""
    gt = basis.T @ grad
    lam_min = float(evals[0])

    if lam_min > 0:
        newton = -gt / evals
        if np.linalg.norm(newton) <= radius:
            return basis @ newton

    # boundary solve: find u >= 0 with ||(D + (shift0 + u) I)^-1 gt|| = radius,
    # working in the offset u so the pole at shift0 needs no masking
    shift0 = max(0.0, -lam_min)
    scale = max(1.0, float(np.max(np.abs(evals))))
    base = evals + shift0
    null = base <= _NULL_TOL * scale

    def step_norm(u):
        with np.errstate(over="ignore", divide="ignore"):
            return float(np.linalg.norm(gt / (base + u)))

    g_null = float(np.linalg.norm(gt[null])) if np.any(null) else 0.0
    if g_null <= _NULL_TOL * (1.0 + float(np.linalg.norm(gt))):
        # gradient has no weight on the bottom eigenspace: pseudo-inverse step
        coeffs = np.where(null, 0.0, -gt / np.where(null, 1.0, base))
        base_norm = float(np.linalg.norm(coeffs))
        if base_norm <= radius:
            step = basis @ coeffs
            if shift0 == 0.0:
                return step  # interior; the model is flat on the null space
            # hard case: pad to the boundary along the bottom eigenvector
            pad = np.sqrt(max(radius * radius - base_norm * base_norm, 0.0))
            return step + pad * basis[:, 0]

    hi = max(1.0, float(np.linalg.norm(gt)) / radius)
    while step_norm(hi) > radius:
        hi = 2.0 * hi + 1.0

    def gap(u):
        norm = step_norm(u)
        if not np.isfinite(norm):
            return -1.0 / radius
        return 1.0 / norm - 1.0 / radius

    u_star = brentq(gap, 1e-300, hi, xtol=1e-18, rtol=8.9e-16, maxiter=300)
    with np.errstate(divide="ignore"):
        step = basis @ (-gt / (base + u_star))
    norm = float(np.linalg.norm(step))
    if not np.isfinite(norm) or norm == 0.0:
        # degenerate: fall back to the boundary along the bottom eigenvector
        return radius * basis[:, 0]
    if norm > radius * (1.0 + 1e-10):
        step *= radius / norm
    return step


def trust_region_subproblem(hess: np.ndarray, grad: np.ndarray, radius: float) -> np.ndarray:
    """Minimize g.s + 0.5 s.H.s over ||s|| <= radius, H symmetric (indefinite ok)."""
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    grad = np.asarray(grad, dtype=float)
    if not np.any(grad) and np.all(np.linalg.eigvalsh(hess) >= 0):
        return np.zeros_like(grad)
    evals, basis = np.linalg.eigh(hess)
    return _solve_factored(evals, basis, grad, radius)


# -- shared trust-region shell -------------------------------------------------


def _damped_bfgs_update(
    approx: np.ndarray, step: np.ndarray, dgrad: np.ndarray, first: bool
) -> np.ndarray:
    """Powell-damped BFGS update keeping the approximation positive definite.

    On the first curvature pair the identity start is rescaled to y.y/y.s
    before updating, so the approximation carries the problem's curvature
    scale immediately (the usual library initialization).
    """
    if first:
        sy0 = float(step @ dgrad)
        yy = float(dgrad @ dgrad)
        if sy0 > 0 and np.isfinite(yy) and yy > 0:
            approx = (yy / sy0) * np.eye(step.size)
    bs = approx @ step
    sbs = float(step @ bs)
    if sbs <= 0:
        return approx  # should not happen for a PD approximation; skip update
    sy = float(step @ dgrad)
    if sy < BFGS_DAMPING * sbs:
        mix = (1.0 - BFGS_DAMPING) * sbs / (sbs - sy)
        dgrad = mix * dgrad + (1.0 - mix) * bs
        sy = float(step @ dgrad)
    return approx - np.outer(bs, bs) / sbs + np.outer(dgrad, dgrad) / sy


def _minimize(
    problem: Problem,
    theta0: Sequence[float],
    criteria: TerminationCriteria,
    config: TrustRegionConfig,
    exact_hessian: bool,
) -> OptimizationReport:
    theta = np.array(theta0, dtype=float).reshape(-1)
    if exact_hessian and problem.cost_grad_hess is None:
        raise ValueError("Newton path requires a cost_grad_hess evaluator")

    # warm-up evaluation of each evaluator; excluded from the timed section
    problem.cost(theta)
    if exact_hessian:
        problem.cost_grad_hess(theta)
    else:
        problem.cost_grad(theta)

    start = time.perf_counter()
    if exact_hessian:
        value, grad, model_hess = problem.cost_grad_hess(theta)
    else:
        value, grad = problem.cost_grad(theta)
        model_hess = np.eye(theta.size)
    if not np.isfinite(value):
        raise EvaluationError(f"non-finite cost {value} at the initial point", iteration=0)

    radius = config.initial_radius
    trace: list[TraceRow] = []
    reason = "max_iters"
    grad_norm = float(np.linalg.norm(grad))
    evals = basis = None  # factorization of model_hess, reused across rejections
    virgin_bfgs = True

    if grad_norm < criteria.grad_tol:
        reason = "grad_tol"
    else:
        for iteration in range(1, criteria.max_iters + 1):
            if evals is None:
                evals, basis = np.linalg.eigh(model_hess)
            step = _solve_factored(evals, basis, grad, radius)
            step_norm = float(np.linalg.norm(step))
            predicted = -(grad @ step + 0.5 * step @ (basis @ (evals * (basis.T @ step))))

            trial = theta + step
            trial_value = problem.cost(trial)
            if not np.isfinite(trial_value):
                raise EvaluationError(
                    f"non-finite trial cost {trial_value}", iteration=iteration
                )
            actual = value - trial_value
            ratio = actual / predicted if predicted > 0 else -np.inf

            accepted = ratio > config.accept_ratio
            if accepted:
                theta = trial
                if exact_hessian:
                    value, grad, model_hess = problem.cost_grad_hess(theta)
                else:
                    value, new_grad = problem.cost_grad(theta)
                    model_hess = _damped_bfgs_update(
                        model_hess, step, new_grad - grad, virgin_bfgs
                    )
                    virgin_bfgs = False
                    grad = new_grad
                evals = basis = None
                grad_norm = float(np.linalg.norm(grad))

            if ratio < config.shrink_ratio:
                radius *= config.shrink_factor
            elif ratio > config.expand_ratio and step_norm >= BOUNDARY_FRACTION * radius:
                radius = min(radius * config.expand_factor, config.max_radius)

            trace.append(
                TraceRow(
                    cost=float(value),
                    grad_norm=grad_norm,
                    step_norm=step_norm if accepted else 0.0,
                    trust_radius=radius,
                )
            )

            if accepted and step_norm < criteria.step_tol:
                reason = "step_tol"
                break
            if radius < criteria.step_tol:
                reason = "step_tol"
                break
            if grad_norm < criteria.grad_tol:
                reason = "grad_tol"
                break

    wall = time.perf_counter() - start
    min_eig = None
    if exact_hessian:
        min_eig = float(evals[0]) if evals is not None else float(np.linalg.eigvalsh(model_hess)[0])
    return OptimizationReport(
        iterations=len(trace),
        wall_time=wall,
        trace=trace,
        final_theta=theta,
        termination_reason=reason,
        final_cost=float(value),
        final_grad_norm=grad_norm,
        final_hessian_min_eig=min_eig,
    )


def newton_trust_region(
    problem: Problem,
    theta0: Sequence[float],
    criteria: TerminationCriteria | None = None,
    config: TrustRegionConfig | None = None,
) -> OptimizationReport:
    """Trust-region Newton iteration driven by exact gradients and Hessians."""
    return _minimize(
        problem,
        theta0,
        criteria or TerminationCriteria(),
        config or TrustRegionConfig(),
        exact_hessian=True,
    )


def bfgs_baseline(
    problem: Problem,
    theta0: Sequence[float],
    criteria: TerminationCriteria | None = None,
    config: TrustRegionConfig | None = None,
) -> OptimizationReport:
    """Same trust-region shell, curvature approximated by damped BFGS updates."""
    return _minimize(
        problem,
        theta0,
        criteria or TerminationCriteria(),
        config or TrustRegionConfig(),
        exact_hessian=False,
    )
