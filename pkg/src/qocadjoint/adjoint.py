"""First- and second-order adjoint sweeps: exact gradients and Hessians.

Writing U_j = exp(Z_j), F_{j,k} = d exp(Z)/dZ|_{Z_j} applied to M_k, and
lam/mu for the first/second-order costates, the implemented recursions are

    lam_J      = rho (a_J - beta),          lam_j = U_j^H lam_{j+1}
    da_{j+1}/dtheta_l = U_j da_j/dtheta_l - i dt sum_k F_{j,k} a_j df^k_j/dtheta_l
    mu_{J,l}   = rho da_J/dtheta_l,
    mu_{j,l}   = U_j^H mu_{j+1,l} + i dt sum_k F_{j,k}^H lam_{j+1} df^k_j/dtheta_l

and the gradient/Hessian contractions follow by total differentiation of the
cost with the propagation constraint substituted in.  Both reductions are
verified against the central-difference oracles in this module; the
finite-difference comparison is the ground truth for every sign above.

Parameter sweeps are vectorized: all N_p sensitivity columns advance through
one matrix-matrix product per step (optionally in contiguous batches of
``batch_width`` columns).  The da and mu histories are materialized in full,
O(J * N * N_p) complex entries each, and allocation is refused beyond a
configurable memory budget.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from . import fastpath
from .controls import ControlModel, as_parameter_vector
from .dynamics import (
    QuantumSystem,
    TrajectoryCache,
    cost_from_fields,
    propagate,
    regularization,
    require_compatible,
)
from .spectral import second_frechet_forms_stacked

DEFAULT_MEMORY_BUDGET = 4 * 2**30  # 4 GiB for the sensitivity histories

FD_GRADIENT_STEP = 1e-5
FD_HESSIAN_STEP = 1e-4


class MemoryBudgetError(RuntimeError):
    """The sensitivity storage for a configuration exceeds the allowed budget."""


@dataclass(frozen=True)
class SensitivityBlock:
    """Forward sensitivities and second-order costates, batched over parameters.

    ``da[j, :, l]`` is d a_j / d theta_l for j = 0..J; ``mu[j, :, l]`` is
    mu_{j,l} for j = 1..J (row 0 is unused and stays zero).
    """

    da: np.ndarray
    mu: np.ndarray


def sensitivity_bytes(system: QuantumSystem, num_params: int, arrays: int = 2) -> int:
    """Bytes for ``arrays`` complex histories of shape (J+1, N, N_p)."""
    return arrays * (system.num_steps + 1) * system.dim * num_params * 16


def _check_budget(system: QuantumSystem, num_params: int, arrays: int, budget: int) -> None:
    needed = sensitivity_bytes(system, num_params, arrays)
    if needed > budget:
        raise MemoryBudgetError(
            f"sensitivity storage needs {needed / 2**30:.2f} GiB "
            f"({arrays} x (J+1={system.num_steps + 1}) x (N={system.dim}) x "
            f"(N_p={num_params}) complex) but the budget is {budget / 2**30:.2f} GiB; "
            "raise memory_budget or reduce J/N_p"
        )


def _param_batches(num_params: int, batch_width: int | None):
    width = num_params if batch_width is None else int(batch_width)
    if width < 1:
        raise ValueError(f"batch_width must be positive, got {batch_width}")
    for lo in range(0, num_params, width):
        yield lo, min(lo + width, num_params)


def _step_jacobians(model: ControlModel, theta) -> tuple[object, np.ndarray]:
    """Model jacobian as (native matrix, dense (J, K, N_p) per-step view)."""
    bmat = model.jacobian(theta)
    if sparse.issparse(bmat):
        dense = bmat.toarray()
    else:
        dense = np.asarray(bmat, dtype=float)
    return bmat, dense.reshape(model.num_steps, model.num_channels, model.num_params)


def _dipole_kicks(cache: TrajectoryCache) -> np.ndarray:
    """v[j, k] = F_{j,k} a_j, the per-step per-channel state kicks."""
    return np.einsum("jkpq,jq->jkp", cache.frechet_dipoles, cache.states[:-1])


def _costate_rows(cache: TrajectoryCache, costates: np.ndarray) -> np.ndarray:
    """wdag[j, k] = lam_{j+1}^H F_{j,k} as row vectors."""
    return np.einsum("jp,jkpq->jkq", costates[1:].conj(), cache.frechet_dipoles)


def costate_sweep(system: QuantumSystem, cache: TrajectoryCache) -> np.ndarray:
    """Backward costate recursion; returns (J+1, N) with row j = lam_j.

    Row 0 is unused (the gradient needs lam_1..lam_J) and stays zero.  The
    final condition carries the cost weight: lam_J = rho (a_J - beta).
    """
    num_steps = cache.num_steps
    costates = np.zeros((num_steps + 1, cache.dim), dtype=complex)
    costates[num_steps] = system.rho * (cache.states[-1] - system.beta)
    for j in range(num_steps - 1, 0, -1):
        costates[j] = cache.propagators[j].conj().T @ costates[j + 1]
    return costates


def _field_weights(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    cache: TrajectoryCache,
    costates: np.ndarray,
) -> np.ndarray:
    """dC/df^k_j holding the trajectory's theta-dependence inside the costates:
    f^k_j + dt * Im(lam_{j+1}^H F_{j,k} a_j); the gradient is its jacobian
    pullback and the Hessian's model-curvature term contracts against it.
    """
    kicks = _dipole_kicks(cache)
    overlaps = np.einsum("jp,jkp->jk", costates[1:].conj(), kicks)
    return model.values(theta) + system.dt * overlaps.imag


def gradient(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    cache: TrajectoryCache,
    costates: np.ndarray,
) -> np.ndarray:
    """Adjoint gradient of the cost with respect to theta, shape (N_p,)."""
    require_compatible(system, model)
    theta = as_parameter_vector(theta, model.num_params)
    weights = _field_weights(system, model, theta, cache, costates)
    return model.jacobian_pullback(theta, weights.ravel())


def sensitivity_sweep(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    cache: TrajectoryCache,
    *,
    batch_width: int | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> np.ndarray:
    """Forward state sensitivities da[j, :, l] = d a_j / d theta_l, (J+1, N, N_p)."""
    require_compatible(system, model)
    theta = as_parameter_vector(theta, model.num_params)
    _check_budget(system, model.num_params, 1, memory_budget)
    _, bsteps = _step_jacobians(model, theta)
    kicks = (-1j * system.dt) * _dipole_kicks(cache).transpose(0, 2, 1)  # (J, N, K)
    da = np.zeros((system.num_steps + 1, system.dim, model.num_params), dtype=complex)
    for lo, hi in _param_batches(model.num_params, batch_width):
        for j in range(system.num_steps):
            da[j + 1, :, lo:hi] = (
                cache.propagators[j] @ da[j, :, lo:hi] + kicks[j] @ bsteps[j, :, lo:hi]
            )
    return da


def mu_sweep(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    cache: TrajectoryCache,
    costates: np.ndarray,
    da: np.ndarray,
    *,
    batch_width: int | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> np.ndarray:
    """Backward second-order costates mu[j, :, l] for j = 1..J, (J+1, N, N_p)."""
    require_compatible(system, model)
    theta = as_parameter_vector(theta, model.num_params)
    _check_budget(system, model.num_params, 1, memory_budget)
    _, bsteps = _step_jacobians(model, theta)
    sources = (1j * system.dt) * _costate_rows(cache, costates).conj().transpose(0, 2, 1)
    mu = np.zeros((system.num_steps + 1, system.dim, model.num_params), dtype=complex)
    mu[system.num_steps] = system.rho * da[system.num_steps]
    for lo, hi in _param_batches(model.num_params, batch_width):
        for j in range(system.num_steps - 1, 0, -1):
            mu[j, :, lo:hi] = (
                cache.propagators[j].conj().T @ mu[j + 1, :, lo:hi]
                + sources[j] @ bsteps[j, :, lo:hi]
            )
    return mu


def _block_diagonal(blocks: np.ndarray) -> sparse.csr_matrix:
    """(J, K, K) blocks to a (J*K, J*K) block-diagonal sparse matrix."""
    num_steps, k, _ = blocks.shape
    base = np.arange(num_steps)[:, None, None] * k
    rows = (base + np.arange(k)[None, :, None]) * np.ones((1, 1, k), dtype=int)
    cols = (base + np.arange(k)[None, None, :]) * np.ones((1, k, 1), dtype=int)
    return sparse.csr_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())),
        shape=(num_steps * k, num_steps * k),
    )


def hessian(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    cache: TrajectoryCache,
    costates: np.ndarray,
    sens: SensitivityBlock,
    *,
    symmetrize: bool = True,
) -> np.ndarray:
    """Adjoint Hessian of the cost, (N_p, N_p) real.

    Five contributions: the model-curvature pair (jacobian outer products and
    field-weight contraction against parameter Hessians), the mu-coupling
    term, the second exp-derivative term over dipole pairs, and the coupling
    of first exp-derivatives to the state sensitivities.  The raw assembly is
    symmetric to rounding; ``symmetrize`` averages with the transpose.
    """
    require_compatible(system, model)
    theta = as_parameter_vector(theta, model.num_params)
    dt = system.dt
    num_steps, num_params = system.num_steps, model.num_params
    bmat, _ = _step_jacobians(model, theta)

    kicks = _dipole_kicks(cache)
    wdag = _costate_rows(cache, costates)
    weights = model.values(theta) + dt * np.einsum(
        "jp,jkp->jk", costates[1:].conj(), kicks
    ).imag

    def to_dense(mat):
        return mat.toarray() if sparse.issparse(mat) else np.asarray(mat)

    # mu-coupling and sensitivity-coupling rows, one per (step, channel)
    mu_rows = dt * np.matmul(kicks, sens.mu[1:].conj()).imag
    da_rows = dt * np.matmul(wdag, sens.da[:-1]).imag
    coupling = (mu_rows + da_rows).reshape(num_steps * model.num_channels, num_params)

    hess = to_dense(bmat.T @ bmat) + to_dense(bmat.T @ coupling)

    curvature = model.hessian_contract(theta, weights)
    if curvature is not None:
        hess = hess + to_dense(curvature).astype(float)

    # second exp-derivative term: per-step quadratic forms over dipole pairs
    forms = second_frechet_forms_stacked(
        cache.eigenvalues,
        cache.eigenvectors,
        dt,
        system.dipoles,
        costates[1:],
        cache.states[:-1],
    ).real
    blocks = _block_diagonal(-(dt * dt) * forms)
    hess = hess + to_dense(bmat.T @ (blocks @ bmat))

    if symmetrize:
        hess = 0.5 * (hess + hess.T)
    return hess


def fd_gradient(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    step: float = FD_GRADIENT_STEP,
) -> np.ndarray:
    """Central-difference gradient of the cost, step h*(1+|theta_l|) per axis.

    Independent of the adjoint path: only forward state propagation is used.
    """
    require_compatible(system, model)
    theta = as_parameter_vector(theta, model.num_params)
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    grad = np.empty(model.num_params)
    for l in range(model.num_params):
        h = step * (1.0 + abs(theta[l]))
        bump = np.zeros_like(theta)
        bump[l] = h
        c_plus = cost_from_fields(system, model.values(theta + bump))
        c_minus = cost_from_fields(system, model.values(theta - bump))
        grad[l] = (c_plus - c_minus) / (2.0 * h)
    return grad


def fd_hessian(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    step: float = FD_HESSIAN_STEP,
) -> np.ndarray:
    """Central differences of the adjoint gradient, column per parameter.

    Returned unsymmetrized so callers can inspect the FD asymmetry before
    averaging.
    """
    require_compatible(system, model)
    theta = as_parameter_vector(theta, model.num_params)
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    hess = np.empty((model.num_params, model.num_params))
    for m in range(model.num_params):
        h = step * (1.0 + abs(theta[m]))
        bump = np.zeros_like(theta)
        bump[m] = h
        _, g_plus = evaluate_gradient(system, model, theta + bump)
        _, g_minus = evaluate_gradient(system, model, theta - bump)
        hess[:, m] = (g_plus - g_minus) / (2.0 * h)
    return hess


def _cost_from_cache(system: QuantumSystem, model: ControlModel, theta, cache: TrajectoryCache) -> float:
    residual = cache.states[-1] - system.beta
    return regularization(model.values(theta)) + 0.5 * system.rho * float(
        np.linalg.norm(residual) ** 2
    )


def gradient_from_cache(
    system: QuantumSystem, model: ControlModel, theta, cache: TrajectoryCache
) -> tuple[float, np.ndarray]:
    """Cost and adjoint gradient from an existing forward cache."""
    costates = costate_sweep(system, cache)
    grad = gradient(system, model, theta, cache, costates)
    return _cost_from_cache(system, model, theta, cache), grad


def hessian_from_cache(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    cache: TrajectoryCache,
    *,
    batch_width: int | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Cost, adjoint gradient and adjoint Hessian from an existing cache."""
    _check_budget(system, model.num_params, 2, memory_budget)
    costates = costate_sweep(system, cache)
    grad = gradient(system, model, theta, cache, costates)
    da = sensitivity_sweep(
        system, model, theta, cache, batch_width=batch_width, memory_budget=memory_budget
    )
    mu = mu_sweep(
        system,
        model,
        theta,
        cache,
        costates,
        da,
        batch_width=batch_width,
        memory_budget=memory_budget,
    )
    hess = hessian(system, model, theta, cache, costates, SensitivityBlock(da=da, mu=mu))
    return _cost_from_cache(system, model, theta, cache), grad, hess


def evaluate_gradient(
    system: QuantumSystem, model: ControlModel, theta
) -> tuple[float, np.ndarray]:
    """One full first-order pass: forward propagation, costate sweep, gradient.

    Runs the JIT-compiled fused pass when available (identical numerics, no
    per-call dispatch floor); otherwise composes the caching ops.
    """
    if fastpath.available():
        require_compatible(system, model)
        theta = as_parameter_vector(theta, model.num_params)
        value, weights = fastpath.first_order_pass(system, model.values(theta))
        return value, model.jacobian_pullback(theta, weights.ravel())
    cache = propagate(system, model, theta)
    return gradient_from_cache(system, model, theta, cache)


def evaluate_hessian(
    system: QuantumSystem,
    model: ControlModel,
    theta,
    *,
    batch_width: int | None = None,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> tuple[float, np.ndarray, np.ndarray]:
    """One full second-order pass: cost, gradient and Hessian at theta."""
    _check_budget(system, model.num_params, 2, memory_budget)
    cache = propagate(system, model, theta)
    return hessian_from_cache(
        system, model, theta, cache, batch_width=batch_width, memory_budget=memory_budget
    )
