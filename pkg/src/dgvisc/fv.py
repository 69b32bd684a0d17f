"""Second-order MUSCL finite volumes on a fine grid (the reference solver).

Minmod-limited linear reconstruction of the conservative variables, local
Lax-Friedrichs interface fluxes and Heun's RK2 in time. Also hosts the
projection of DG solutions onto the fine grid and the flat binary format for
stored reference trajectories.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre as npleg

from dgvisc import autodiff as ad
from dgvisc.autodiff import Tensor
from dgvisc.dg import DGMesh, DGState
from dgvisc.equations import EquationSpec, InstabilityError, flux, max_wave_speed

__all__ = [
    "FVMesh",
    "FVState",
    "minmod",
    "muscl_rhs",
    "rk2_step",
    "reference_rollout",
    "fine_projection_matrix",
    "project_dg_to_fine",
    "save_reference",
    "load_reference",
]

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class FVMesh:
    x_min: float
    x_max: float
    n_ref: int
    boundary: str = "periodic"
    left_state: np.ndarray | None = None
    right_state: np.ndarray | None = None

    def __post_init__(self):
        if self.n_ref < 3:
            raise ValueError("need at least 3 cells")
        if self.boundary == "dirichlet":
            self.left_state = np.atleast_1d(np.asarray(self.left_state, dtype=np.float64))
            self.right_state = np.atleast_1d(np.asarray(self.right_state, dtype=np.float64))
        elif self.boundary != "periodic":
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_ref

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + self.dx * (np.arange(self.n_ref) + 0.5)

    @classmethod
    def matching(cls, mesh: DGMesh, n_ref: int) -> FVMesh:
        return cls(mesh.x_min, mesh.x_max, n_ref, mesh.boundary, mesh.left_state, mesh.right_state)


@dataclass
class FVState:
    U: np.ndarray
    t: float = 0.0


def minmod(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _with_ghosts(mesh: FVMesh, U: np.ndarray, n: int = 2) -> np.ndarray:
    if mesh.periodic:
        return np.concatenate([U[:, -n:], U, U[:, :n]], axis=1)
    left = np.repeat(mesh.left_state[:, None], n, axis=1)
    right = np.repeat(mesh.right_state[:, None], n, axis=1)
    return np.concatenate([left, U, right], axis=1)


def muscl_rhs(eq: EquationSpec, mesh: FVMesh, U: np.ndarray) -> np.ndarray:
    """-(F_{i+1/2} - F_{i-1/2}) / dx for cell averages ``U`` of shape (s, n)."""
    Ug = _with_ghosts(mesh, U)
    d = np.diff(Ug, axis=1)
    # slopes for cells 1 .. n+2 of the padded array
    slope = minmod(d[:, :-1], d[:, 1:])
    center = Ug[:, 1:-1]
    left_edge = center - 0.5 * slope
    right_edge = center + 0.5 * slope
    # face between padded cells j and j+1, for j = 1 .. n+1
    uL = right_edge[:, :-1]
    uR = left_edge[:, 1:]
    lam = np.maximum(max_wave_speed(eq, uL), max_wave_speed(eq, uR))
    F = 0.5 * (flux(eq, uL) + flux(eq, uR)) - 0.5 * lam * (uR - uL)
    return -(F[:, 1:] - F[:, :-1]) / mesh.dx


def rk2_step(eq: EquationSpec, mesh: FVMesh, state: FVState, dt: float) -> FVState:
    """Heun's method (explicit trapezoidal rule)."""
    U = state.U
    U1 = U + dt * muscl_rhs(eq, mesh, U)
    U2 = 0.5 * U + 0.5 * (U1 + dt * muscl_rhs(eq, mesh, U1))
    if not np.isfinite(U2).all():
        raise InstabilityError("non-finite reference solution")
    return FVState(U2, state.t + dt)


def reference_rollout(
    eq: EquationSpec, mesh: FVMesh, state: FVState, dt: float, n: int, stride: int = 1
) -> list[FVState]:
    """``n`` macro-steps of ``stride`` RK2 steps each; returns n + 1 states."""
    lam = float(np.max(max_wave_speed(eq, state.U)))
    if dt * lam > 0.5 * mesh.dx:
        logger.warning("reference dt=%.3g violates CFL 0.5 (dx=%.3g, speed=%.3g)", dt, mesh.dx, lam)
    out = [state]
    for k in range(n * stride):
        try:
            state = rk2_step(eq, mesh, state, dt)
        except InstabilityError as exc:
            raise InstabilityError(exc.reason, step=k + 1) from None
        if (k + 1) % stride == 0:
            out.append(state)
    return out


def _gauss_points_for(p: int) -> int:
    # exact averages of degree p-1 polynomials
    return max(2, math.ceil(p / 2))


def fine_projection_matrix(p: int, ratio: int, basis_at) -> np.ndarray:
    """P[k, i] = mean of phi_k over the i-th of ``ratio`` equal sub-cells."""
    xq, wq = npleg.leggauss(_gauss_points_for(p))
    edges = np.linspace(-1.0, 1.0, ratio + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * xq[None, :]).ravel()
    B = basis_at(pts).reshape(ratio, len(xq), p)
    return np.einsum("iqk,q->ki", B, 0.5 * wq)


def project_dg_to_fine(mesh: DGMesh, U, n_ref: int):
    """Fine-cell averages of the DG polynomial, shape (s, n_ref).

    Accepts a :class:`DGState`, a Tensor (recorded) or an ndarray.
    """
    if n_ref % mesh.n_x:
        raise ValueError(f"n_ref={n_ref} is not a multiple of n_x={mesh.n_x}")
    ratio = n_ref // mesh.n_x
    key = ("proj", ratio)
    P = mesh._ops.get(key)
    if P is None:
        P = fine_projection_matrix(mesh.p, ratio, mesh.basis_at)
        mesh._ops[key] = P
    if isinstance(U, DGState):
        U = U.U
    if isinstance(U, Tensor):
        s = U.shape[0]
        return ad.reshape(ad.matmul(U, P), (s, n_ref))
    U = np.asarray(U)
    return (U @ P).reshape(U.shape[0], n_ref)


_HEADER = struct.Struct("<IIIId")


def save_reference(path, states: list[FVState] | np.ndarray, stride: int, dt: float) -> None:
    """Header (s, n_ref, count, stride, dt) then little-endian float64 data."""
    arr = np.stack([st.U for st in states]) if isinstance(states, list) else np.asarray(states)
    count, s, n_ref = arr.shape
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(s, n_ref, count, stride, dt))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_reference(path) -> tuple[np.ndarray, int, float]:
    """Returns (array of shape (count, s, n_ref), stride, dt)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated reference file")
    s, n_ref, count, stride, dt = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != s * n_ref * count:
        raise ValueError("reference file size does not match its header")
    return data.reshape(count, s, n_ref).astype(np.float64), stride, dt
