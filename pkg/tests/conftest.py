"""Shared fixtures: independent oracles and small test control models."""
from __future__ import annotations

import numpy as np
import pytest

from qocadjoint.controls import ControlModel, as_parameter_vector
from qocadjoint.dynamics import QuantumSystem
from qocadjoint.workbench import generate_synthetic


def taylor_expm(mat: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring Taylor exponential, independent of the spectral path.

    Scales below norm 1/4, sums the series until terms vanish in double
    precision, then squares back.
    """
    mat = np.asarray(mat, dtype=complex)
    norm = np.linalg.norm(mat, ord=1)
    squarings = max(0, int(np.ceil(np.log2(max(norm, 1e-300) / 0.25))))
    scaled = mat / (2.0**squarings)
    term = np.eye(mat.shape[0], dtype=complex)
    total = term.copy()
    for k in range(1, 40):
        term = scaled @ term / k
        total += term
        if np.linalg.norm(term, ord=1) < 1e-18 * max(1.0, np.linalg.norm(total, ord=1)):
            break
    for _ in range(squarings):
        total = total @ total
    return total


def random_hermitian(rng: np.random.Generator, dim: int) -> np.ndarray:
    raw = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (raw + raw.conj().T)


def random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    vec = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def make_system(
    dim: int = 4,
    num_channels: int = 1,
    num_steps: int = 16,
    *,
    rho: float = 1.0,
    dt: float = 0.1,
    seed: int = 0,
) -> QuantumSystem:
    base = generate_synthetic(dim, num_channels, seed=seed)
    return QuantumSystem(
        h0=base.h0,
        dipoles=base.dipoles,
        alpha=base.alpha,
        beta=base.beta,
        rho=rho,
        num_steps=num_steps,
        dt=dt,
    )


class FourierModel(ControlModel):
    """Nonlinear test model: f^k_j = tanh(c_k . theta_k) cos-sin expansion.

    Each channel owns ``num_modes`` amplitude pairs; the tanh wrapper makes
    the parameter Hessian nonzero so the dense jacobian and curvature paths
    get exercised.  Test-only.
    """

    def __init__(self, num_steps: int, num_channels: int = 1, num_modes: int = 2):
        self.num_steps = num_steps
        self.num_channels = num_channels
        self.num_modes = num_modes
        self.num_params = num_channels * 2 * num_modes
        t = np.arange(num_steps) / num_steps
        freqs = np.arange(1, num_modes + 1)
        self._basis = np.concatenate(
            [np.cos(2 * np.pi * freqs[:, None] * t), np.sin(2 * np.pi * freqs[:, None] * t)]
        ).T  # (J, 2*num_modes)

    def _channel_params(self, theta):
        return theta.reshape(self.num_channels, 2 * self.num_modes)

    def values(self, theta):
        theta = as_parameter_vector(theta, self.num_params)
        lin = self._basis @ self._channel_params(theta).T  # (J, K)
        return np.tanh(lin)

    def jacobian(self, theta):
        theta = as_parameter_vector(theta, self.num_params)
        lin = self._basis @ self._channel_params(theta).T
        sech2 = 1.0 - np.tanh(lin) ** 2  # (J, K)
        out = np.zeros((self.num_steps * self.num_channels, self.num_params))
        width = 2 * self.num_modes
        for k in range(self.num_channels):
            rows = np.arange(self.num_steps) * self.num_channels + k
            out[rows, k * width : (k + 1) * width] = sech2[:, k : k + 1] * self._basis
        return out

    def hessian_contract(self, theta, weights):
        theta = as_parameter_vector(theta, self.num_params)
        lin = self._basis @ self._channel_params(theta).T
        tanh = np.tanh(lin)
        second = -2.0 * tanh * (1.0 - tanh**2)  # d^2 tanh
        out = np.zeros((self.num_params, self.num_params))
        width = 2 * self.num_modes
        weights = np.asarray(weights, dtype=float)
        for k in range(self.num_channels):
            scaled = (weights[:, k] * second[:, k])[:, None] * self._basis
            block = self._basis.T @ scaled
            out[k * width : (k + 1) * width, k * width : (k + 1) * width] = block
        return out


class DeadParameterModel(ControlModel):
    """Maximal model plus one trailing parameter nothing depends on."""

    def __init__(self, num_steps: int, num_channels: int = 1):
        self.num_steps = num_steps
        self.num_channels = num_channels
        self.num_params = num_steps * num_channels + 1

    def values(self, theta):
        theta = as_parameter_vector(theta, self.num_params)
        return theta[:-1].reshape(self.num_channels, self.num_steps).T.copy()

    def jacobian(self, theta):
        as_parameter_vector(theta, self.num_params)
        rows = self.num_steps * self.num_channels
        out = np.zeros((rows, self.num_params))
        idx = np.arange(rows)
        out[idx, (idx % self.num_channels) * self.num_steps + idx // self.num_channels] = 1.0
        return out

    def hessian_contract(self, theta, weights):
        return None

    @property
    def is_linear(self):
        return True


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
