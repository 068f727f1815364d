"""Forward propagation of the discrete Schrodinger system and its cost.

The state obeys a_{j+1} = exp(Z_j) a_j with Z_j = -i*dt*(H0 + sum_k f^k_j M_k).
One forward pass stores everything later sweeps reread: the states, the
per-step spectral factors and propagators, and the directional derivative of
exp along each dipole.  The cache is immutable after construction and safe to
share across workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .controls import ControlModel, as_parameter_vector
from .spectral import (
    SpectralFactor,
    first_divided_differences,
    fix_eigenvector_phases,
    require_hermitian,
)

# Unit-norm tolerance for initial/target states.
STATE_NORM_ATOL = 1e-10


class PropagationError(RuntimeError):
    """Forward propagation failed; carries the offending step index."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class QuantumSystem:
    """Problem instance: matrices, endpoint states, cost weight, time grid.

    ``h0`` and every dipole must be Hermitian to 1e-12 per entry; ``alpha``
    and ``beta`` must be unit vectors to 1e-10.  Off-spec inputs are rejected
    here rather than renormalized, since silent fixes would change the
    optimization problem.
    """

    h0: np.ndarray
    dipoles: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    rho: float
    num_steps: int
    dt: float

    def __post_init__(self):
        h0 = require_hermitian(self.h0, name="h0")
        dipoles = np.asarray(self.dipoles, dtype=complex)
        if dipoles.ndim != 3 or dipoles.shape[1:] != h0.shape:
            raise ValueError(
                f"dipoles must be stacked (K, {h0.shape[0]}, {h0.shape[0]}), got {dipoles.shape}"
            )
        if dipoles.shape[0] < 1:
            raise ValueError("at least one dipole matrix is required")
        for k in range(dipoles.shape[0]):
            require_hermitian(dipoles[k], name=f"dipole {k}")
        alpha = np.asarray(self.alpha, dtype=complex).reshape(-1)
        beta = np.asarray(self.beta, dtype=complex).reshape(-1)
        for name, vec in (("alpha", alpha), ("beta", beta)):
            if vec.shape != (h0.shape[0],):
                raise ValueError(f"{name} must have length {h0.shape[0]}")
            norm = np.linalg.norm(vec)
            if abs(norm - 1.0) > STATE_NORM_ATOL:
                raise ValueError(f"{name} must be unit norm, got ||{name}|| = {norm!r}")
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ValueError(f"rho must be finite and nonnegative, got {self.rho}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be positive, got {self.num_steps}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        # private copies so freezing never touches caller-owned arrays
        h0, dipoles, alpha, beta = h0.copy(), dipoles.copy(), alpha.copy(), beta.copy()
        for arr in (h0, dipoles, alpha, beta):
            arr.flags.writeable = False
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "dipoles", dipoles)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "num_steps", int(self.num_steps))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def num_channels(self) -> int:
        return self.dipoles.shape[0]


@dataclass(frozen=True)
class TrajectoryCache:
    """Everything one forward pass produces, kept for the adjoint sweeps.

    ``states[j]`` is a_j (J+1 rows); ``eigenvalues``/``eigenvectors`` stack the
    per-step spectral factors; ``propagators[j]`` = exp(Z_j); and
    ``frechet_dipoles[j, k]`` is the cached directional derivative
    d exp(Z)/dZ|_{Z_j} applied to M_k.  Memory is O(J * N^2 * (2 + K)) complex
    entries; nothing here is mutated after construction.
    """

    states: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    propagators: np.ndarray
    frechet_dipoles: np.ndarray
    dt: float

    @property
    def num_steps(self) -> int:
        return self.propagators.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @cached_property
    def factors(self) -> tuple[SpectralFactor, ...]:
        """Per-step spectral factors, viewing the stacked arrays."""
        return tuple(
            SpectralFactor(
                eigenvalues=self.eigenvalues[j],
                eigenvectors=self.eigenvectors[j],
                dt=self.dt,
            )
            for j in range(self.num_steps)
        )


def require_compatible(system: QuantumSystem, model: ControlModel) -> None:
    if model.num_steps != system.num_steps:
        raise ValueError(
            f"model covers {model.num_steps} steps but the system has {system.num_steps}"
        )
    if model.num_channels != system.num_channels:
        raise ValueError(
            f"model drives {model.num_channels} channels but the system has {system.num_channels}"
        )


def build_generator(system: QuantumSystem, model: ControlModel, theta, step: int) -> np.ndarray:
    """H_j = H0 + sum_k f^k_j M_k; Hermitian by construction (real fields)."""
    require_compatible(system, model)
    if not 0 <= step < system.num_steps:
        raise ValueError(f"step {step} outside [0, {system.num_steps - 1}]")
    fields = model.values(theta)[step]
    return system.h0 + np.einsum("k,kpq->pq", fields, system.dipoles)


def _decompose_all(system: QuantumSystem, fields: np.ndarray):
    """Batched eigendecomposition of every step generator.

    Returns (eigenvalues (J, N), eigenvectors (J, N, N), propagators (J, N, N)).
    """
    gens = system.h0[None, :, :] + np.einsum("jk,kpq->jpq", fields, system.dipoles)
    try:
        vals, vecs = np.linalg.eigh(gens)
    except np.linalg.LinAlgError as exc:
        for j in range(gens.shape[0]):
            try:
                np.linalg.eigh(gens[j])
            except np.linalg.LinAlgError:
                raise PropagationError(
                    f"eigendecomposition failed at step {j}: {exc}", step=j
                ) from exc
        raise PropagationError(f"eigendecomposition failed: {exc}") from exc
    vecs = fix_eigenvector_phases(vecs)
    phases = np.exp(-1j * system.dt * vals)
    props = (vecs * phases[:, None, :]) @ vecs.conj().transpose(0, 2, 1)
    return vals, vecs, props


def _run_states(system: QuantumSystem, propagators: np.ndarray) -> np.ndarray:
    states = np.empty((system.num_steps + 1, system.dim), dtype=complex)
    states[0] = system.alpha
    for j in range(system.num_steps):
        states[j + 1] = propagators[j] @ states[j]
    return states


def propagate_states(system: QuantumSystem, fields: np.ndarray) -> np.ndarray:
    """States a_0..a_J for given per-step fields, without derivative caching.

    The cheap path for cost-only evaluations (trial points, finite-difference
    oracles); ``propagate`` below is the full caching pass.
    """
    fields = np.asarray(fields, dtype=float).reshape(system.num_steps, system.num_channels)
    _, _, props = _decompose_all(system, fields)
    return _run_states(system, props)


def _assemble_cache(
    system: QuantumSystem,
    vals: np.ndarray,
    vecs: np.ndarray,
    props: np.ndarray,
    states: np.ndarray,
) -> TrajectoryCache:
    """Finish a cache from a decomposition: per-dipole exp-derivatives, freeze."""
    phi = first_divided_differences(-1j * system.dt * vals)
    tilted = np.einsum(
        "jnp,kno,joq->jkpq", vecs.conj(), system.dipoles, vecs, optimize=True
    )
    fre = np.einsum(
        "jpn,jkno,jqo->jkpq",
        vecs,
        phi[:, None, :, :] * tilted,
        vecs.conj(),
        optimize=True,
    )
    for arr in (states, vals, vecs, props, fre):
        arr.flags.writeable = False
    return TrajectoryCache(
        states=states,
        eigenvalues=vals,
        eigenvectors=vecs,
        propagators=props,
        frechet_dipoles=fre,
        dt=system.dt,
    )


def propagate(system: QuantumSystem, model: ControlModel, theta) -> TrajectoryCache:
    """Run the forward recursion and cache factors, propagators and
    per-dipole exp-derivatives for the adjoint sweeps."""
    require_compatible(system, model)
    theta = as_parameter_vector(theta, model.num_params)
    fields = model.values(theta)
    vals, vecs, props = _decompose_all(system, fields)
    states = _run_states(system, props)
    return _assemble_cache(system, vals, vecs, props, states)


def regularization(fields: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.asarray(fields) ** 2))


def cost(system: QuantumSystem, model: ControlModel, theta, cache: TrajectoryCache) -> float:
    """Discrete cost: 0.5 sum_{k,j} f^k_j^2 + (rho/2) ||a_J - beta||^2."""
    fields = model.values(theta)
    residual = cache.states[-1] - system.beta
    return regularization(fields) + 0.5 * system.rho * float(
        np.linalg.norm(residual) ** 2
    )


def cost_from_fields(system: QuantumSystem, fields: np.ndarray) -> float:
    """Cost evaluated directly from per-step fields via the cheap state pass."""
    states = propagate_states(system, fields)
    residual = states[-1] - system.beta
    return regularization(fields) + 0.5 * system.rho * float(np.linalg.norm(residual) ** 2)


def target_violation(cache: TrajectoryCache, beta: np.ndarray) -> float:
    """||a_J - beta||_2, the achieved-vs-desired endpoint gap."""
    return float(np.linalg.norm(cache.states[-1] - np.asarray(beta, dtype=complex)))
