"""Seeded synthetic problem instances for benchmarks and studies."""
from __future__ import annotations

import numpy as np

from .io import SystemFile


def generate_synthetic(dim: int, num_channels: int, seed: int, name: str | None = None) -> SystemFile:
    """Random diagonal core Hamiltonian plus random Hermitian dipoles.

    Diagonal entries are standard normal sorted ascending; each dipole is the
    Hermitian part (A + A^H)/2 of a complex standard-normal A.  The initial
    state is e_1 and the target e_N.  Deterministic per seed.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    if not 1 <= num_channels <= 3:
        raise ValueError(f"num_channels must be in 1..3, got {num_channels}")
    rng = np.random.default_rng(seed)
    h0 = np.diag(np.sort(rng.standard_normal(dim))).astype(complex)
    dipoles = np.empty((num_channels, dim, dim), dtype=complex)
    for k in range(num_channels):
        raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        dipoles[k] = 0.5 * (raw + raw.conj().T)
    alpha = np.zeros(dim, dtype=complex)
    beta = np.zeros(dim, dtype=complex)
    alpha[0] = 1.0
    beta[-1] = 1.0
    return SystemFile(
        name=name or f"synthetic-n{dim}-k{num_channels}-seed{seed}",
        h0=h0,
        dipoles=dipoles,
        alpha=alpha,
        beta=beta,
    )
