"""Eigendecomposition-based matrix exponential and its directional derivatives.

Every generator handled here has the form Z = -i*dt*H with H Hermitian, so we
diagonalize H (real spectrum, robust solvers) and place the exponential's
spectrum points at z_p = -i*dt*h_p on the imaginary axis.  First and second
directional derivatives of exp are assembled entrywise from divided
differences of exp over those points (Daleckii-Krein form); confluent limits
are taken through series so clustered or exactly degenerate eigenvalues never
hit a 0/0 quotient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Per-entry Hermiticity tolerance for inputs.
HERMITIAN_ATOL = 1e-12

# Below this relative gap, a first divided difference switches from the direct
# quotient to the cancellation-free sinhc form.
_PAIR_REL_GAP = 1e-7
# Below this argument magnitude, sinh(u)/u is summed as a series.
_SINHC_SERIES_CUT = 1e-4
# Below this max pairwise gap, a second divided difference uses the centered
# series; above it, the largest available denominator keeps quotients stable.
_TRIPLE_GAP = 1e-3


class EigendecompositionError(RuntimeError):
    """The dense Hermitian eigensolver failed to converge."""


def require_hermitian(mat, *, atol: float = HERMITIAN_ATOL, name: str = "matrix") -> np.ndarray:
    """Validate and return ``mat`` as a square complex Hermitian array."""
    mat = np.asarray(mat, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ValueError(f"{name} has non-finite entries")
    defect = float(np.max(np.abs(mat - mat.conj().T))) if mat.size else 0.0
    if defect > atol:
        raise ValueError(
            f"{name} is not Hermitian: max |A - A^H| entry = {defect:.3e} (tol {atol:.1e})"
        )
    return mat


def fix_eigenvector_phases(vecs: np.ndarray) -> np.ndarray:
    """Rotate each eigenvector so its largest-magnitude component is real positive.

    Works on a single (N, N) matrix or a stack (..., N, N); columns are the
    eigenvectors.  This pins the gauge so repeated decompositions of identical
    input bits reproduce identical factors.
    """
    idx = np.argmax(np.abs(vecs), axis=-2)
    lead = np.take_along_axis(vecs, idx[..., None, :], axis=-2)[..., 0, :]
    return vecs * (np.abs(lead) / lead)[..., None, :]


@dataclass(frozen=True)
class SpectralFactor:
    """Eigendecomposition of a Hermitian generator H paired with a step size.

    ``eigenvalues`` are ascending and real; column p of ``eigenvectors`` is the
    unit eigenvector for eigenvalue p.  The propagated generator is
    Z = -i*dt*H, whose spectrum is returned by :meth:`phase_points`.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dt: float

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def phase_points(self) -> np.ndarray:
        return -1j * self.dt * self.eigenvalues


def decompose(hermitian: np.ndarray, dt: float) -> SpectralFactor:
    """Diagonalize a Hermitian generator; eigenvalues ascending, phases pinned."""
    hermitian = require_hermitian(hermitian, name="generator")
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    try:
        vals, vecs = np.linalg.eigh(hermitian)
    except np.linalg.LinAlgError as exc:
        raise EigendecompositionError(f"eigensolver failed to converge: {exc}") from exc
    vecs = fix_eigenvector_phases(vecs)
    vals.flags.writeable = False
    vecs.flags.writeable = False
    return SpectralFactor(eigenvalues=vals, eigenvectors=vecs, dt=float(dt))


def step_propagator(factor: SpectralFactor) -> np.ndarray:
    """exp(-i*dt*H) = V diag(exp(-i*dt*h_p)) V^H; unitary by construction."""
    v = factor.eigenvectors
    return (v * np.exp(factor.phase_points)) @ v.conj().T


def _sinhc(u: np.ndarray) -> np.ndarray:
    """sinh(u)/u with a series fallback near zero."""
    u = np.asarray(u, dtype=complex)
    small = np.abs(u) < _SINHC_SERIES_CUT
    safe = np.where(small, 1.0, u)
    u2 = u * u
    series = 1.0 + u2 / 6.0 * (1.0 + u2 / 20.0)
    return np.where(small, series, np.sinh(safe) / safe)


def first_divided_differences(z: np.ndarray) -> np.ndarray:
    """Table exp[z_p, z_q] over spectrum points; supports stacked (..., N) input.

    Away from clusters this is the direct quotient (e^a - e^b)/(a - b); within
    a relative gap of _PAIR_REL_GAP the algebraically equivalent
    e^{(a+b)/2} * sinhc((a-b)/2) avoids the subtractive cancellation.
    """
    z = np.asarray(z, dtype=complex)
    a = z[..., :, None]
    b = z[..., None, :]
    diff = a - b
    gap_tol = _PAIR_REL_GAP * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    close = np.abs(diff) < gap_tol
    direct = (np.exp(a) - np.exp(b)) / np.where(close, 1.0, diff)
    confluent = np.exp(0.5 * (a + b)) * _sinhc(0.5 * diff)
    return np.where(close, confluent, direct)


def _second_divided_slice(z: np.ndarray, r: int, phi: np.ndarray) -> np.ndarray:
    """Tables exp[z_p, z_r, z_q] over (p, q) for a fixed middle point index r.

    Accepts stacked input: z (..., N) with phi (..., N, N) yields (..., N, N).
    The three equivalent quotient forms differ only in which pairwise gap lands
    in the denominator; picking the largest gap entrywise bounds the rounding
    amplification by eps/_TRIPLE_GAP.  When all three points sit inside
    _TRIPLE_GAP, a centered series in the deviations from the mean is exact to
    well below double rounding.
    """
    a = z[..., :, None]
    c = z[..., None, :]
    b = z[..., r, None, None]
    f_ab = phi[..., :, r, None]
    f_bc = phi[..., r, None, :]
    f_ac = phi
    d_ac = a - c
    d_ab = np.broadcast_to(a - b, d_ac.shape)
    d_bc = np.broadcast_to(b - c, d_ac.shape)

    def quotient(num, den):
        return num / np.where(np.abs(den) < _TRIPLE_GAP, 1.0, den)

    g_ac, g_ab, g_bc = np.abs(d_ac), np.abs(d_ab), np.abs(d_bc)
    use_ab = (g_ab >= g_ac) & (g_ab >= g_bc)
    use_bc = (g_bc > g_ac) & (g_bc > g_ab)
    out = quotient(f_ab - f_bc, d_ac)
    out = np.where(use_ab, quotient(f_ac - f_bc, d_ab), out)
    out = np.where(use_bc, quotient(f_ab - f_ac, d_bc), out)

    clustered = np.maximum(g_ac, np.maximum(g_ab, g_bc)) < _TRIPLE_GAP
    if np.any(clustered):
        mean = (a + b + c) / 3.0
        u, v, w = a - mean, b - mean, c - mean
        s2 = 0.5 * (u * u + v * v + w * w)
        series = np.exp(mean) * (0.5 + s2 / 24.0 + u * v * w / 120.0 + s2 * s2 / 720.0)
        out = np.where(clustered, series, out)
    return out


def second_divided_differences(z: np.ndarray) -> np.ndarray:
    """Full (N, N, N) table exp[z_p, z_r, z_q], middle index second.

    O(N^3) storage; intended for inspection and testing at small N.  The
    derivative kernels below consume one (N, N) slice at a time instead.
    """
    z = np.asarray(z, dtype=complex)
    phi = first_divided_differences(z)
    return np.stack([_second_divided_slice(z, r, phi) for r in range(z.shape[0])], axis=1)


@dataclass(frozen=True)
class LoewnerTable:
    """Divided-difference tables of exp over a factor's spectrum points."""

    first_divided: np.ndarray
    second_divided: np.ndarray | None


def loewner_table(factor: SpectralFactor, include_second: bool = True) -> LoewnerTable:
    z = factor.phase_points
    first = first_divided_differences(z)
    second = second_divided_differences(z) if include_second else None
    return LoewnerTable(first_divided=first, second_divided=second)


def frechet_first(factor: SpectralFactor, direction: np.ndarray) -> np.ndarray:
    """Directional derivative of exp at Z = -i*dt*H along ``direction``.

    Daleckii-Krein form: V (Phi o (V^H W V)) V^H with Phi the first divided
    differences of exp over the phase points.  Linear in the direction.
    """
    v = factor.eigenvectors
    wt = v.conj().T @ np.asarray(direction, dtype=complex) @ v
    phi = first_divided_differences(factor.phase_points)
    return v @ (phi * wt) @ v.conj().T


def frechet_second(factor: SpectralFactor, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Symmetric bilinear second derivative of exp at Z along (w1, w2).

    In the eigenbasis, entry (p, q) is
    sum_r exp[z_p, z_r, z_q] (W1_pr W2_rq + W2_pr W1_rq); the middle-index
    tables are consumed one (N, N) slice at a time so no N^3 tensor is held.
    """
    v = factor.eigenvectors
    z = factor.phase_points
    a = v.conj().T @ np.asarray(w1, dtype=complex) @ v
    b = v.conj().T @ np.asarray(w2, dtype=complex) @ v
    phi = first_divided_differences(z)
    acc = np.zeros_like(a)
    for r in range(factor.dim):
        t_r = _second_divided_slice(z, r, phi)
        acc += t_r * (a[:, r : r + 1] * b[r : r + 1, :] + b[:, r : r + 1] * a[r : r + 1, :])
    return v @ acc @ v.conj().T


def second_frechet_forms(
    factor: SpectralFactor,
    directions: np.ndarray,
    left: np.ndarray,
    right: np.ndarray,
) -> np.ndarray:
    """Bilinear forms left^H [d^2 exp (W_k, W_n)] right for all direction pairs.

    ``directions`` is a stack (K, N, N); the result is the (K, K) complex
    matrix of quadratic forms, symmetric in (k, n).  Used where only the
    sandwiched scalars are needed, avoiding K^2 full matrix assemblies.
    """
    v = factor.eigenvectors
    z = factor.phase_points
    x = (v.conj().T @ np.asarray(left, dtype=complex)).conj()
    y = v.conj().T @ np.asarray(right, dtype=complex)
    tilted = np.einsum("np,kno,oq->kpq", v.conj(), np.asarray(directions, dtype=complex), v)
    phi = first_divided_differences(z)
    out = np.zeros((tilted.shape[0], tilted.shape[0]), dtype=complex)
    for r in range(factor.dim):
        t_r = _second_divided_slice(z, r, phi)
        u = x * tilted[:, :, r]            # rows: x^H o W_k[:, r]
        w = (tilted[:, r, :] * y) @ t_r.T  # rows: t_r @ (W_k[r, :] o y)
        out += u @ w.T + w @ u.T
    return out


def second_frechet_forms_stacked(
    eigenvalues: np.ndarray,
    eigenvectors: np.ndarray,
    dt: float,
    directions: np.ndarray,
    lefts: np.ndarray,
    rights: np.ndarray,
) -> np.ndarray:
    """:func:`second_frechet_forms` over a whole trajectory at once.

    ``eigenvalues`` (J, N) and ``eigenvectors`` (J, N, N) describe one factor
    per step; ``lefts``/``rights`` are (J, N) vectors.  Returns (J, K, K).
    Batching moves the middle-index loop outside all step work, which is what
    keeps the Hessian assembly linear-in-J wall time at small N.
    """
    z = -1j * dt * eigenvalues
    vc = eigenvectors.conj()
    x = np.einsum("jnp,jn->jp", vc, np.asarray(lefts, dtype=complex)).conj()
    y = np.einsum("jnp,jn->jp", vc, np.asarray(rights, dtype=complex))
    tilted = np.einsum(
        "jnp,kno,joq->jkpq",
        vc,
        np.asarray(directions, dtype=complex),
        eigenvectors,
        optimize=True,
    )
    phi = first_divided_differences(z)
    num_dirs = tilted.shape[1]
    out = np.zeros((z.shape[0], num_dirs, num_dirs), dtype=complex)
    for r in range(z.shape[1]):
        t_r = _second_divided_slice(z, r, phi)
        u = x[:, None, :] * tilted[:, :, :, r]
        w = np.einsum("jkq,jpq->jkp", tilted[:, :, r, :] * y[:, None, :], t_r)
        out += np.einsum("jkp,jnp->jkn", u, w) + np.einsum("jkp,jnp->jkn", w, u)
    return out
