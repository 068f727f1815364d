"""Control-field parameterizations f^k(j*dt; theta) and their derivatives.

A model maps a flat parameter vector theta to per-step, per-channel field
strengths, evaluated at the left endpoint of each step.  The engine consumes
three batched views: all values at once, the stacked jacobian as a
(J*K, N_p) matrix (sparse allowed), and a weighted sum of per-step parameter
Hessians.  Anything differentiable enough to supply those three fits behind
this interface.
"""
from __future__ import annotations

import abc

import numpy as np
import scipy.sparse as sparse


class ControlIndexError(IndexError):
    """A (step, channel) pair outside the model's grid was requested."""


def as_parameter_vector(theta, num_params: int) -> np.ndarray:
    """Validate theta: 1-D, float, the declared length, all entries finite."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (num_params,):
        raise ValueError(f"expected {num_params} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector has non-finite entries")
    return theta


class ControlModel(abc.ABC):
    """Interface contract for control parameterizations.

    Subclasses set ``num_steps`` (J), ``num_channels`` (K, between 1 and 3)
    and ``num_params`` (N_p) and implement the batched evaluators.  Row
    j*K + k of the jacobian matrix holds the parameter gradient of f^k_j.
    """

    num_steps: int
    num_channels: int
    num_params: int

    @abc.abstractmethod
    def values(self, theta) -> np.ndarray:
        """Field strengths on the full grid, shape (J, K)."""

    @abc.abstractmethod
    def jacobian(self, theta):
        """Stacked parameter jacobian, shape (J*K, N_p); ndarray or CSR."""

    def jacobian_pullback(self, theta, row_weights) -> np.ndarray:
        """jacobian(theta)^T @ row_weights, shape (N_p,).

        Structured models can beat the generic matrix product; the default
        just forms it.
        """
        return np.asarray(self.jacobian(theta).T @ np.asarray(row_weights)).reshape(
            self.num_params
        )

    def hessian_contract(self, theta, weights) -> np.ndarray | None:
        """sum_{j,k} weights[j, k] * d^2 f^k_j / dtheta dtheta, or None if zero.

        Linear models return None so callers can skip the term entirely.
        """
        raise NotImplementedError

    @property
    def is_linear(self) -> bool:
        """True when all parameter Hessians vanish identically."""
        return False

    # -- pointwise accessors -------------------------------------------------

    def _check_index(self, step: int, channel: int) -> None:
        if not 0 <= step < self.num_steps:
            raise ControlIndexError(
                f"step {step} outside [0, {self.num_steps - 1}]"
            )
        if not 0 <= channel < self.num_channels:
            raise ControlIndexError(
                f"channel {channel} outside [0, {self.num_channels - 1}]"
            )

    def value(self, theta, step: int, channel: int) -> float:
        self._check_index(step, channel)
        return float(self.values(theta)[step, channel])

    def jacobian_at(self, theta, step: int, channel: int) -> np.ndarray:
        self._check_index(step, channel)
        row = self.jacobian(theta)[step * self.num_channels + channel]
        if sparse.issparse(row):
            row = row.toarray()
        return np.asarray(row, dtype=float).reshape(self.num_params)

    def hessian_at(self, theta, step: int, channel: int) -> np.ndarray:
        self._check_index(step, channel)
        weights = np.zeros((self.num_steps, self.num_channels))
        weights[step, channel] = 1.0
        hess = self.hessian_contract(theta, weights)
        if hess is None:
            return np.zeros((self.num_params, self.num_params))
        return np.asarray(hess, dtype=float)


class MaximalModel(ControlModel):
    """One parameter per (channel, step): f^k(j*dt; theta) = theta[k, j].

    theta is the K x J matrix flattened row-major, so parameter k*J + j drives
    channel k at step j.  The jacobian is a constant permutation matrix and
    every parameter Hessian is zero.
    """

    def __init__(self, num_steps: int, num_channels: int = 1):
        if num_steps < 1:
            raise ValueError(f"num_steps must be positive, got {num_steps}")
        if not 1 <= num_channels <= 3:
            raise ValueError(f"num_channels must be in 1..3, got {num_channels}")
        self.num_steps = int(num_steps)
        self.num_channels = int(num_channels)
        self.num_params = self.num_steps * self.num_channels
        # rows indexed by j*K + k, columns by k*J + j
        rows = np.arange(self.num_params)
        cols = (rows % num_channels) * num_steps + rows // num_channels
        data = np.ones(self.num_params)
        self._jacobian = sparse.csr_matrix(
            (data, (rows, cols)), shape=(self.num_params, self.num_params)
        )
        self._pullback_cols = cols

    def values(self, theta) -> np.ndarray:
        theta = as_parameter_vector(theta, self.num_params)
        return theta.reshape(self.num_channels, self.num_steps).T.copy()

    def jacobian(self, theta):
        as_parameter_vector(theta, self.num_params)
        return self._jacobian

    def jacobian_pullback(self, theta, row_weights) -> np.ndarray:
        # the jacobian is a permutation: scatter instead of multiplying
        out = np.empty(self.num_params)
        out[self._pullback_cols] = np.asarray(row_weights).reshape(self.num_params)
        return out

    def hessian_contract(self, theta, weights) -> None:
        return None

    @property
    def is_linear(self) -> bool:
        return True


_REGISTRY = {
    "maximal": MaximalModel,
}


def available_models() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


def build_model(name: str, num_steps: int, num_channels: int) -> ControlModel:
    """Instantiate a registered model by name; unknown names are rejected."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown control model {name!r}; available: {', '.join(available_models())}"
        ) from None
    return factory(num_steps=num_steps, num_channels=num_channels)


def register_model(name: str, factory) -> None:
    """Add a model factory(num_steps=..., num_channels=...) under ``name``."""
    if name in _REGISTRY:
        raise ValueError(f"model name {name!r} already registered")
    _REGISTRY[name] = factory


def check_model_consistency(
    model: ControlModel,
    theta,
    *,
    jac_step: float = 1e-6,
    hess_step: float = 1e-5,
) -> tuple[float, float]:
    """Return max relative deviations (jacobian vs FD of values,
    hessian contraction vs FD of jacobian rows) at theta.

    Central differences with per-coordinate steps h*(1 + |theta_l|).  The
    jacobian check should land near 1e-6 and the Hessian check near 1e-5 for
    any model meeting the smoothness contract.
    """
    theta = as_parameter_vector(theta, model.num_params)
    jac = model.jacobian(theta)
    if sparse.issparse(jac):
        jac = jac.toarray()
    jac = np.asarray(jac, dtype=float)

    fd_jac = np.empty_like(jac)
    steps = jac_step * (1.0 + np.abs(theta))
    for l in range(model.num_params):
        bump = np.zeros_like(theta)
        bump[l] = steps[l]
        plus = model.values(theta + bump)
        minus = model.values(theta - bump)
        fd_jac[:, l] = ((plus - minus) / (2.0 * steps[l])).ravel()
    scale = max(1.0, float(np.max(np.abs(fd_jac))))
    jac_err = float(np.max(np.abs(jac - fd_jac))) / scale

    # FD of jacobian rows against the weighted Hessian contraction, probed
    # with a random-ish but deterministic weight pattern.
    weights = np.cos(np.arange(model.num_steps * model.num_channels, dtype=float))
    weights = weights.reshape(model.num_steps, model.num_channels)
    contracted = model.hessian_contract(theta, weights)
    if contracted is None:
        contracted = np.zeros((model.num_params, model.num_params))
    contracted = np.asarray(contracted, dtype=float)
    fd_hess = np.empty_like(contracted)
    steps = hess_step * (1.0 + np.abs(theta))
    wflat = weights.ravel()
    for l in range(model.num_params):
        bump = np.zeros_like(theta)
        bump[l] = steps[l]
        jac_plus = model.jacobian(theta + bump)
        jac_minus = model.jacobian(theta - bump)
        if sparse.issparse(jac_plus):
            jac_plus = jac_plus.toarray()
            jac_minus = jac_minus.toarray()
        diff = (np.asarray(jac_plus) - np.asarray(jac_minus)) / (2.0 * steps[l])
        fd_hess[:, l] = wflat @ diff
    scale = max(1.0, float(np.max(np.abs(fd_hess))))
    hess_err = float(np.max(np.abs(contracted - fd_hess))) / scale
    return jac_err, hess_err
