"""Closed-form artificial viscosities used for comparison: DB and MDH.

Both are evaluated on the raw nodal values and returned as constants; they
carry no trainable parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from dgvisc import autodiff as ad
from dgvisc.autodiff import Tensor
from dgvisc.dg import DGMesh
from dgvisc.equations import EquationSpec, max_wave_speed

__all__ = [
    "DBParams",
    "MDHParams",
    "DBViscosity",
    "MDHViscosity",
    "db_viscosity",
    "mu_max",
    "legendre_modal_ratio",
    "mdh_threshold",
    "mdh_ramp",
    "mdh_viscosity",
]


@dataclass(frozen=True)
class DBParams:
    c_beta: float = 1.0
    c_max: float = 0.5

    def __post_init__(self):
        if self.c_beta < 0 or self.c_max < 0:
            raise ValueError("DB constants must be nonnegative")


@dataclass(frozen=True)
class MDHParams:
    c_A: float = 2.5
    c_K: float = 0.2
    c_max: float = 0.5

    def __post_init__(self):
        if self.c_K <= 0:
            raise ValueError("c_K must be positive")


def _data(U) -> np.ndarray:
    return U.data if isinstance(U, Tensor) else np.asarray(U, dtype=np.float64)


def _indicator_variable(eq: EquationSpec, U: np.ndarray, velocity: bool) -> np.ndarray:
    if eq.name != "euler":
        return U[0]
    return U[1] / U[0] if velocity else U[0]


def mu_max(mesh: DGMesh, eq: EquationSpec, U, c_max: float = 0.5) -> np.ndarray:
    """Per-cell cap c_max * dx/(p-1) * max over the cell of the wave speed, shape (n_x,)."""
    speed = np.asarray(max_wave_speed(eq, _data(U)))
    return c_max * mesh.dx / (mesh.p - 1) * speed.max(axis=-1)


def db_viscosity(mesh: DGMesh, eq: EquationSpec, U, params: DBParams = DBParams()) -> np.ndarray:
    """Derivative-based viscosity min(mu_beta, mu_max) at every node, (n_x, p)."""
    U = _data(U)
    u = _indicator_variable(eq, U, velocity=True)
    dudx = (u @ mesh.D.T) * (2.0 / mesh.dx)
    h = mesh.dx / (mesh.p - 1)
    mu_beta = params.c_beta * h * h * np.abs(dudx)
    cap = mu_max(mesh, eq, U, params.c_max)[:, None]
    return np.minimum(mu_beta, cap)


def legendre_modal_ratio(mesh: DGMesh, rho_cell) -> float | np.ndarray:
    """log10 of the energy fraction in the highest Legendre mode.

    ``rho_cell`` holds nodal values with the cell on the last axis. A cell
    with no energy in the top mode gives ``-inf``.
    """
    rho = np.asarray(rho_cell, dtype=np.float64)
    modes = rho @ np.linalg.inv(mesh.V).T
    p = mesh.p
    norms = 2.0 / (2.0 * np.arange(p) + 1.0)
    energy = modes**2 * norms
    total = energy.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log10(energy[..., -1] / total)
    r = np.where(total > 0, r, -np.inf)
    r = np.where(np.isnan(r), -np.inf, r)
    return float(r) if r.ndim == 0 else r


def mdh_threshold(p: int, params: MDHParams = MDHParams()) -> float:
    return -(params.c_A + 4.0 * math.log10(p - 1))


def mdh_ramp(r, r0: float, c_K: float):
    """0 below r0 - c_K, 1 above r0 + c_K, half-sine in between."""
    r = np.asarray(r, dtype=np.float64)
    inner = 0.5 * (1.0 + np.sin(np.pi * (np.clip(r, r0 - c_K, r0 + c_K) - r0) / (2.0 * c_K)))
    return np.where(r < r0 - c_K, 0.0, np.where(r > r0 + c_K, 1.0, inner))


def mdh_cell_values(mesh: DGMesh, eq: EquationSpec, U, params: MDHParams = MDHParams()) -> np.ndarray:
    U = _data(U)
    r = legendre_modal_ratio(mesh, _indicator_variable(eq, U, velocity=False))
    ramp = mdh_ramp(r, mdh_threshold(mesh.p, params), params.c_K)
    return mu_max(mesh, eq, U, params.c_max) * ramp


def mdh_interpolate(mesh: DGMesh, cell_values: np.ndarray) -> np.ndarray:
    """Continuous piecewise-quadratic field through cell midpoints and face averages."""
    c = np.asarray(cell_values, dtype=np.float64)
    if mesh.periodic:
        left_nb, right_nb = np.roll(c, 1), np.roll(c, -1)
    else:
        left_nb = np.concatenate([c[:1], c[:-1]])
        right_nb = np.concatenate([c[1:], c[-1:]])
    a = 0.5 * (c + left_nb)
    b = 0.5 * (c + right_nb)
    xi = mesh.nodes
    # quadratic through (-1, a), (0, c), (1, b)
    la = 0.5 * xi * (xi - 1.0)
    lc = 1.0 - xi * xi
    lb = 0.5 * xi * (xi + 1.0)
    mu = a[:, None] * la + c[:, None] * lc + b[:, None] * lb
    # the quadratic can dip below zero next to an inactive cell
    return np.maximum(mu, 0.0)


def mdh_viscosity(mesh: DGMesh, eq: EquationSpec, U, params: MDHParams = MDHParams()) -> np.ndarray:
    """Highest-modal-decay viscosity at every node, (n_x, p)."""
    return mdh_interpolate(mesh, mdh_cell_values(mesh, eq, U, params))


class DBViscosity:
    name = "db"

    def __init__(self, params: DBParams = DBParams()):
        self.params = params

    def __call__(self, mesh: DGMesh, eq: EquationSpec, U) -> Tensor:
        return ad.constant(db_viscosity(mesh, eq, U, self.params))


class MDHViscosity:
    name = "mdh"

    def __init__(self, params: MDHParams = MDHParams()):
        self.params = params

    def __call__(self, mesh: DGMesh, eq: EquationSpec, U) -> Tensor:
        return ad.constant(mdh_viscosity(mesh, eq, U, self.params))
