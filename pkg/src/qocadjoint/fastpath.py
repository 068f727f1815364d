"""JIT-compiled first-order pass.

The gradient pass at small N is dominated by interpreter dispatch when run
through the vectorized numpy path, which flattens the low end of wall-time
scaling studies.  This module carries a fused implementation of the whole
first-order sweep (forward propagation, backward costates, field-weight
contraction) compiled with numba; the timing protocol's warm-up evaluation
doubles as the JIT trigger.  Numerics are identical to the composed ops (same
LAPACK eigensolver, same divided-difference branches); if numba is missing
the package falls back to the numpy composition transparently.

The kernel returns per-(step, channel) field weights
f^k_j + dt * Im(lam_{j+1}^H F_{j,k} a_j); the caller applies the model
jacobian pullback, which keeps arbitrary control models out of compiled code.
"""
from __future__ import annotations

import numpy as np

try:
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _nb = None
    HAVE_NUMBA = False


def available() -> bool:
    return HAVE_NUMBA


if HAVE_NUMBA:

    @_nb.njit(cache=True)
    def _first_order_pass(h0, dipoles, alpha, beta, rho, dt, fields):
        num_steps, num_channels = fields.shape
        dim = h0.shape[0]
        states = np.empty((num_steps + 1, dim), np.complex128)
        vecs = np.empty((num_steps, dim, dim), np.complex128)
        zs = np.empty((num_steps, dim), np.complex128)
        ezs = np.empty((num_steps, dim), np.complex128)
        props = np.empty((num_steps, dim, dim), np.complex128)
        states[0] = alpha
        for j in range(num_steps):
            gen = h0.copy()
            for k in range(num_channels):
                gen = gen + fields[j, k] * dipoles[k]
            vals, vec = np.linalg.eigh(gen)
            z = -1j * dt * vals
            ez = np.exp(z)
            prop = np.dot(vec * ez, vec.conj().T)
            vecs[j] = vec
            zs[j] = z
            ezs[j] = ez
            props[j] = prop
            states[j + 1] = np.dot(prop, states[j])

        reg = 0.0
        for j in range(num_steps):
            for k in range(num_channels):
                reg += fields[j, k] * fields[j, k]
        resid = states[num_steps] - beta
        rnorm2 = 0.0
        for p in range(dim):
            rnorm2 += (resid[p] * resid[p].conjugate()).real
        cost = 0.5 * reg + 0.5 * rho * rnorm2

        lams = np.empty((num_steps + 1, dim), np.complex128)
        lams[num_steps] = rho * resid
        for j in range(num_steps - 1, 0, -1):
            lams[j] = np.dot(props[j].conj().T, lams[j + 1])

        weights = np.empty((num_steps, num_channels))
        for j in range(num_steps):
            vec = vecs[j]
            z = zs[j]
            ez = ezs[j]
            x = np.dot(vec.conj().T, lams[j + 1])
            y = np.dot(vec.conj().T, states[j])
            for k in range(num_channels):
                tilted = np.dot(vec.conj().T, np.dot(dipoles[k], vec))
                overlap = 0.0
                for p in range(dim):
                    xc = x[p].conjugate()
                    for q in range(dim):
                        gap = z[p] - z[q]
                        tol = 1e-7 * max(1.0, abs(z[p]), abs(z[q]))
                        if abs(gap) < tol:
                            half = 0.5 * gap
                            if abs(half) < 1e-4:
                                h2 = half * half
                                sinhc = 1.0 + h2 / 6.0 * (1.0 + h2 / 20.0)
                            else:
                                sinhc = np.sinh(half) / half
                            phi = np.exp(0.5 * (z[p] + z[q])) * sinhc
                        else:
                            phi = (ez[p] - ez[q]) / gap
                        overlap += (xc * phi * tilted[p, q] * y[q]).imag
                weights[j, k] = fields[j, k] + dt * overlap
        return cost, weights


def first_order_pass(system, fields: np.ndarray) -> tuple[float, np.ndarray]:
    """Cost and field weights dC/df^k_j for the given per-step fields.

    Requires :func:`available`; callers fall back to the composed numpy ops
    otherwise.
    """
    cost, weights = _first_order_pass(
        system.h0,
        system.dipoles,
        system.alpha,
        system.beta,
        system.rho,
        system.dt,
        np.ascontiguousarray(fields, dtype=float),
    )
    return float(cost), weights
