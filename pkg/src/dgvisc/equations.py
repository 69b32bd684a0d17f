"""Physical fluxes and wave speeds for advection, Burgers and 1D Euler.

The functions accept either plain ndarrays or :class:`~dgvisc.autodiff.Tensor`
objects laid out as ``(s, ...)`` with the conserved variable on axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dgvisc import autodiff as ad
from dgvisc.autodiff import Tensor

__all__ = [
    "EquationSpec",
    "InstabilityError",
    "advection",
    "burgers",
    "euler",
    "flux",
    "max_wave_speed",
    "primitive_to_conservative",
    "conservative_to_primitive",
]

N_VARS = {"advection": 1, "burgers": 1, "euler": 3}


class InstabilityError(RuntimeError):
    """Raised when the discrete solution leaves the admissible set.

    ``step`` is the time-step index at which it was detected, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.reason = message
        self.step = step


@dataclass(frozen=True)
class EquationSpec:
    name: str
    speed: float = 1.0
    gamma: float = 1.4

    def __post_init__(self):
        if self.name not in N_VARS:
            raise ValueError(f"unknown equation {self.name!r}")
        if self.gamma <= 1.0:
            raise ValueError("gamma must exceed 1")

    @property
    def n_vars(self) -> int:
        return N_VARS[self.name]


def advection(speed: float = 1.0) -> EquationSpec:
    return EquationSpec("advection", speed=speed)


def burgers() -> EquationSpec:
    return EquationSpec("burgers")


def euler(gamma: float = 1.4) -> EquationSpec:
    return EquationSpec("euler", gamma=gamma)


def _is_tensor(u) -> bool:
    return isinstance(u, Tensor)


def _check_positive(rho, p) -> None:
    r = rho.data if _is_tensor(rho) else rho
    q = p.data if _is_tensor(p) else p
    if not np.all(r > 0):
        raise InstabilityError("non-positive density")
    if not np.all(q > 0):
        raise InstabilityError("non-positive pressure")


def _euler_parts(eq: EquationSpec, U):
    rho, m, E = U[0], U[1], U[2]
    u = m / rho
    p = (E - 0.5 * (m * u)) * (eq.gamma - 1.0)
    _check_positive(rho, p)
    return rho, m, E, u, p


def flux(eq: EquationSpec, U):
    """Physical flux f(U), same layout as ``U``."""
    if eq.name == "advection":
        return U * eq.speed
    if eq.name == "burgers":
        if _is_tensor(U):
            return ad.scale(ad.square(U), 0.5)
        return 0.5 * U * U
    _, m, E, u, p = _euler_parts(eq, U)
    parts = (m, m * u + p, (E + p) * u)
    return ad.stack(parts) if _is_tensor(U) else np.stack(parts)


def max_wave_speed(eq: EquationSpec, U):
    """Largest characteristic speed at each point (variable axis removed)."""
    if eq.name == "advection":
        shape = U.shape[1:]
        return np.full(shape, abs(eq.speed)) if not _is_tensor(U) else ad.constant(np.full(shape, abs(eq.speed)))
    if eq.name == "burgers":
        return abs(U[0])
    rho, _, _, u, p = _euler_parts(eq, U)
    if _is_tensor(U):
        return ad.absolute(u) + ad.sqrt(ad.div(ad.scale(p, eq.gamma), rho))
    return np.abs(u) + np.sqrt(eq.gamma * p / rho)


def primitive_to_conservative(eq: EquationSpec, W: np.ndarray) -> np.ndarray:
    """(rho, u, p) -> (rho, rho u, E) along axis 0."""
    W = np.asarray(W, dtype=np.float64)
    rho, u, p = W[0], W[1], W[2]
    if not (np.all(rho > 0) and np.all(p > 0)):
        raise ValueError("density and pressure must be positive")
    return np.stack([rho, rho * u, p / (eq.gamma - 1.0) + 0.5 * rho * u * u])


def conservative_to_primitive(eq: EquationSpec, U: np.ndarray) -> np.ndarray:
    U = np.asarray(U, dtype=np.float64)
    rho, m, E = U[0], U[1], U[2]
    if not np.all(rho > 0):
        raise ValueError("density must be positive")
    u = m / rho
    p = (eq.gamma - 1.0) * (E - 0.5 * m * u)
    return np.stack([rho, u, p])
