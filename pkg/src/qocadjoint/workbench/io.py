"""On-disk formats: system files and run configurations.

Both formats are JSON.  Complex scalars are stored as [re, im] pairs and
matrices dense row-major, so molecular matrices produced by external
chemistry codes can be dropped in without a binary dependency.  Floats are
serialized through repr and round-trip bit exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..controls import available_models
from ..dynamics import QuantumSystem
from ..optimizer import TerminationCriteria, TrustRegionConfig
from ..spectral import require_hermitian
from ..adjoint import DEFAULT_MEMORY_BUDGET

SYSTEM_FORMAT_VERSION = 1

OPTIMIZERS = ("newton", "bfgs")


def _complex_out(array: np.ndarray) -> list:
    """Nested [re, im] lists mirroring the array shape."""
    stacked = np.stack([np.real(array), np.imag(array)], axis=-1)
    return stacked.tolist()


def _complex_in(data, shape_hint: str) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError(f"{shape_hint}: complex entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


@dataclass(frozen=True)
class SystemFile:
    """Matrices and endpoint states of one problem instance.

    The time grid and cost weight deliberately live in :class:`RunConfig`
    so one system can be reused across runs.
    """

    name: str
    h0: np.ndarray
    dipoles: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    format_version: int = SYSTEM_FORMAT_VERSION

    def __post_init__(self):
        h0 = require_hermitian(self.h0, name="h0")
        dipoles = np.asarray(self.dipoles, dtype=complex)
        for k in range(dipoles.shape[0]):
            require_hermitian(dipoles[k], name=f"dipole {k}")
        alpha = np.asarray(self.alpha, dtype=complex).reshape(-1)
        beta = np.asarray(self.beta, dtype=complex).reshape(-1)
        for label, vec in (("alpha", alpha), ("beta", beta)):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-10:
                raise ValueError(f"{label} must be unit norm")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "dipoles", dipoles)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def num_channels(self) -> int:
        return self.dipoles.shape[0]

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "name": self.name,
            "dim": self.dim,
            "num_channels": self.num_channels,
            "h0": _complex_out(self.h0),
            "dipoles": [_complex_out(self.dipoles[k]) for k in range(self.num_channels)],
            "alpha": _complex_out(self.alpha),
            "beta": _complex_out(self.beta),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SystemFile":
        version = data.get("format_version")
        if version != SYSTEM_FORMAT_VERSION:
            raise ValueError(
                f"unsupported system file format_version {version!r}, "
                f"expected {SYSTEM_FORMAT_VERSION}"
            )
        h0 = _complex_in(data["h0"], "h0")
        dipoles = np.stack([_complex_in(m, "dipole") for m in data["dipoles"]])
        obj = cls(
            name=str(data["name"]),
            h0=h0,
            dipoles=dipoles,
            alpha=_complex_in(data["alpha"], "alpha"),
            beta=_complex_in(data["beta"], "beta"),
        )
        if obj.dim != int(data["dim"]) or obj.num_channels != int(data["num_channels"]):
            raise ValueError("declared dim/num_channels disagree with the stored matrices")
        return obj


def save_system(system: SystemFile, path) -> None:
    Path(path).write_text(json.dumps(system.to_dict(), indent=1) + "\n")


def load_system(path) -> SystemFile:
    return SystemFile.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond the system matrices."""

    rho: float = 1e6
    dt: float = 0.1
    num_steps: int = 200
    model: str = "maximal"
    optimizer: str = "newton"
    seed: int = 0
    criteria: TerminationCriteria = field(default_factory=TerminationCriteria)
    trust_region: TrustRegionConfig = field(default_factory=TrustRegionConfig)
    batch_width: int | None = None
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.num_steps < 1:
            raise ValueError(f"num_steps must be positive, got {self.num_steps}")
        if self.model not in available_models():
            raise ValueError(
                f"unknown control model {self.model!r}; available: {available_models()}"
            )
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.batch_width is not None and self.batch_width < 1:
            raise ValueError("batch_width must be positive when given")
        if self.memory_budget < 1:
            raise ValueError("memory_budget must be positive")

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "dt": self.dt,
            "num_steps": self.num_steps,
            "model": self.model,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "criteria": {
                "step_tol": self.criteria.step_tol,
                "grad_tol": self.criteria.grad_tol,
                "max_iters": self.criteria.max_iters,
            },
            "trust_region": {
                "initial_radius": self.trust_region.initial_radius,
                # null encodes an unbounded radius (JSON has no infinity)
                "max_radius": (
                    None if np.isinf(self.trust_region.max_radius)
                    else self.trust_region.max_radius
                ),
            },
            "batch_width": self.batch_width,
            "memory_budget": self.memory_budget,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        crit = data.get("criteria", {})
        tr = data.get("trust_region", {})
        max_radius = tr.get("max_radius")
        return cls(
            rho=float(data.get("rho", 1e6)),
            dt=float(data.get("dt", 0.1)),
            num_steps=int(data.get("num_steps", 200)),
            model=str(data.get("model", "maximal")),
            optimizer=str(data.get("optimizer", "newton")),
            seed=int(data.get("seed", 0)),
            criteria=TerminationCriteria(
                step_tol=float(crit.get("step_tol", 1e-10)),
                grad_tol=float(crit.get("grad_tol", 1e-10)),
                max_iters=int(crit.get("max_iters", 10_000)),
            ),
            trust_region=TrustRegionConfig(
                initial_radius=float(tr.get("initial_radius", 1.0)),
                max_radius=float("inf") if max_radius is None else float(max_radius),
            ),
            batch_width=(None if data.get("batch_width") is None else int(data["batch_width"])),
            memory_budget=int(data.get("memory_budget", DEFAULT_MEMORY_BUDGET)),
        )


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=1) + "\n")


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))


def assemble_system(system_file: SystemFile, config: RunConfig) -> QuantumSystem:
    """Join stored matrices with a run's grid and weight into a live instance."""
    return QuantumSystem(
        h0=system_file.h0,
        dipoles=system_file.dipoles,
        alpha=system_file.alpha,
        beta=system_file.beta,
        rho=config.rho,
        num_steps=config.num_steps,
        dt=config.dt,
    )
