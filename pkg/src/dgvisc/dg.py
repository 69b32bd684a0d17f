"""Nodal discontinuous Galerkin discretization with artificial viscosity.

The solution lives on Gauss-Lobatto nodes of each cell, stored as an array of
shape ``(s, n_x, p)``. The viscous term is handled with the first-order local
DG system: an auxiliary gradient ``Q`` computed with centered interface values,
``G = mu * Q`` nodewise, and a centered flux for ``G``. The convective flux
uses local Lax-Friedrichs. Time stepping is classical RK4 with the viscosity
evaluated once per step.

All interface/lifting operators are linear in their input and are recorded on
the tape as single nodes (:class:`~dgvisc.autodiff.LinearMap`).
"""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre as npleg

from dgvisc import autodiff as ad
from dgvisc.autodiff import LinearMap, Tensor
from dgvisc.equations import EquationSpec, InstabilityError, flux, max_wave_speed

__all__ = [
    "DGMesh",
    "DGState",
    "NoViscosity",
    "build_mesh",
    "gauss_lobatto",
    "lax_friedrichs",
    "semidiscrete_rhs",
    "rk4_step",
    "rollout",
    "write_snapshot_csv",
]

logger = logging.getLogger(__name__)


def gauss_lobatto(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the p-point Gauss-Lobatto rule on [-1, 1]."""
    if p < 2:
        raise ValueError("Gauss-Lobatto needs at least 2 points")
    n = p - 1
    interior = npleg.Legendre.basis(n).deriv().roots() if n > 1 else np.array([])
    nodes = np.concatenate([[-1.0], np.sort(np.real(interior)), [1.0]])
    weights = 2.0 / (n * (n + 1) * npleg.legval(nodes, np.eye(n + 1)[n]) ** 2)
    return nodes, weights


def legendre_vandermonde(x: np.ndarray, p: int) -> np.ndarray:
    """V[i, k] = P_k(x_i), k < p."""
    return npleg.legvander(x, p - 1)


@dataclass(eq=False)
class DGMesh:
    x_min: float
    x_max: float
    n_x: int
    p: int
    boundary: str = "periodic"
    left_state: np.ndarray | None = None
    right_state: np.ndarray | None = None
    mass: str = "exact"

    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    M: np.ndarray = field(init=False, repr=False)
    Minv: np.ndarray = field(init=False, repr=False)
    S: np.ndarray = field(init=False, repr=False)
    D: np.ndarray = field(init=False, repr=False)
    V: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_x < 2 or self.p < 2:
            raise ValueError("need n_x >= 2 and p >= 2")
        if self.x_max <= self.x_min:
            raise ValueError("empty interval")
        if self.boundary not in ("periodic", "dirichlet"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.mass not in ("exact", "lumped"):
            raise ValueError(f"unknown mass matrix {self.mass!r}")
        if self.boundary == "dirichlet":
            if self.left_state is None or self.right_state is None:
                raise ValueError("dirichlet boundary needs left and right states")
            self.left_state = np.atleast_1d(np.asarray(self.left_state, dtype=np.float64))
            self.right_state = np.atleast_1d(np.asarray(self.right_state, dtype=np.float64))

        p = self.p
        self.nodes, self.weights = gauss_lobatto(p)
        self.V = legendre_vandermonde(self.nodes, p)
        Vinv = np.linalg.inv(self.V)
        # exact integration of products of degree p-1 polynomials
        xq, wq = npleg.leggauss(p + 1)
        phi = npleg.legvander(xq, p - 1) @ Vinv
        dP = np.stack([npleg.legval(xq, npleg.legder(np.eye(p)[k])) for k in range(p)], axis=1)
        dphi = dP @ Vinv
        self.S = phi.T @ (wq[:, None] * dphi)
        if self.mass == "exact":
            self.M = phi.T @ (wq[:, None] * phi)
        else:
            # collocation at the Gauss-Lobatto nodes
            self.M = np.diag(self.weights)
        self.Minv = np.linalg.inv(self.M)
        dPn = np.stack([npleg.legval(self.nodes, npleg.legder(np.eye(p)[k])) for k in range(p)], axis=1)
        self.D = dPn @ Vinv
        self._ops: dict = {}

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_x

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    @property
    def x(self) -> np.ndarray:
        """Physical node coordinates, shape (n_x, p)."""
        left = self.x_min + self.dx * np.arange(self.n_x)
        return left[:, None] + 0.5 * self.dx * (self.nodes[None, :] + 1.0)

    @property
    def n_dof(self) -> int:
        return self.n_x * self.p

    def basis_at(self, xi: np.ndarray) -> np.ndarray:
        """Lagrange basis values B[q, k] = phi_k(xi_q) on the reference cell."""
        return npleg.legvander(np.asarray(xi, dtype=np.float64), self.p - 1) @ np.linalg.inv(self.V)

    def total_mass(self, U) -> np.ndarray:
        """Integral of each variable over the domain."""
        data = U.data if isinstance(U, Tensor) else np.asarray(U)
        return 0.5 * self.dx * np.einsum("snk,k->s", data, self.weights)

    def with_states(self, left, right) -> DGMesh:
        return DGMesh(self.x_min, self.x_max, self.n_x, self.p, "dirichlet", left, right, self.mass)

    # cached linear operators

    def divergence_op(self, ghost: str, left=None, right=None) -> LinearMap:
        """X -> (X* - X S) M^-1 (2/dx) with centered interface values X*.

        ``ghost`` selects the outer-face value at a Dirichlet boundary:
        ``"const"`` uses ``left``/``right`` (shape (s,)), ``"mirror"`` copies
        the interior trace. Periodic meshes wrap regardless.
        """
        if self.periodic:
            ghost = "wrap"
        key = ("div", ghost, None if left is None else tuple(left), None if right is None else tuple(right))
        op = self._ops.get(key)
        if op is not None:
            return op
        c = 2.0 / self.dx
        rR = c * self.Minv[-1, :]
        rL = c * self.Minv[0, :]
        SM = c * (self.S @ self.Minv)
        SMt = SM.T.copy()
        gl = None if left is None else np.asarray(left, dtype=np.float64)
        gr = None if right is None else np.asarray(right, dtype=np.float64)

        def forward(X):
            tr_l = X[..., 0]
            tr_r = X[..., -1]
            if ghost == "wrap":
                outer_l, outer_r = tr_r[:, -1], tr_l[:, 0]
            elif ghost == "mirror":
                outer_l, outer_r = tr_l[:, 0], tr_r[:, -1]
            else:
                outer_l, outer_r = gl, gr
            minus = np.concatenate([outer_l[:, None], tr_r], axis=1)
            plus = np.concatenate([tr_l, outer_r[:, None]], axis=1)
            avg = 0.5 * (minus + plus)
            return avg[:, 1:, None] * rR - avg[:, :-1, None] * rL - X @ SM

        def adjoint(g):
            gavg = np.zeros((g.shape[0], g.shape[1] + 1))
            gavg[:, 1:] += g @ rR
            gavg[:, :-1] -= g @ rL
            half = 0.5 * gavg
            gX = -(g @ SMt)
            gX[..., -1] += half[:, 1:]
            gX[..., 0] += half[:, :-1]
            if ghost == "wrap":
                gX[:, -1, -1] += half[:, 0]
                gX[:, 0, 0] += half[:, -1]
            elif ghost == "mirror":
                gX[:, 0, 0] += half[:, 0]
                gX[:, -1, -1] += half[:, -1]
            return gX

        op = LinearMap(forward, adjoint)
        self._ops[key] = op
        return op

    def face_op(self, side: str, ghost=None) -> LinearMap:
        """Interface traces, shape (s, n_x + 1); face f sits left of cell f.

        ``side="minus"`` takes the value from the cell on the left,
        ``"plus"`` from the cell on the right. ``ghost`` is the (s,) state
        beyond the domain for Dirichlet meshes.
        """
        key = ("face", side, None if ghost is None else tuple(ghost))
        op = self._ops.get(key)
        if op is not None:
            return op
        periodic = self.periodic
        gv = None if ghost is None else np.asarray(ghost, dtype=np.float64)

        if side == "minus":

            def forward(X):
                tr = X[..., -1]
                outer = tr[:, -1] if periodic else gv
                return np.concatenate([outer[:, None], tr], axis=1)

            def adjoint(g):
                gX = np.zeros(g.shape[:1] + (g.shape[1] - 1, self.p))
                gX[..., -1] = g[:, 1:]
                if periodic:
                    gX[:, -1, -1] += g[:, 0]
                return gX

        elif side == "plus":

            def forward(X):
                tr = X[..., 0]
                outer = tr[:, 0] if periodic else gv
                return np.concatenate([tr, outer[:, None]], axis=1)

            def adjoint(g):
                gX = np.zeros(g.shape[:1] + (g.shape[1] - 1, self.p))
                gX[..., 0] = g[:, :-1]
                if periodic:
                    gX[:, 0, 0] += g[:, -1]
                return gX

        else:
            raise ValueError(side)
        op = LinearMap(forward, adjoint)
        self._ops[key] = op
        return op

    def lift_op(self) -> LinearMap:
        """Face fluxes (s, n_x + 1) -> (f_R e_p - f_L e_1) M^-1 (2/dx)."""
        op = self._ops.get("lift")
        if op is not None:
            return op
        c = 2.0 / self.dx
        rR = c * self.Minv[-1, :]
        rL = c * self.Minv[0, :]

        def forward(Fs):
            return Fs[:, 1:, None] * rR - Fs[:, :-1, None] * rL

        def adjoint(g):
            gF = np.zeros((g.shape[0], g.shape[1] + 1))
            gF[:, 1:] += g @ rR
            gF[:, :-1] -= g @ rL
            return gF

        op = LinearMap(forward, adjoint)
        self._ops["lift"] = op
        return op


def build_mesh(
    x_min: float,
    x_max: float,
    n_x: int,
    p: int,
    boundary: str = "periodic",
    left_state=None,
    right_state=None,
    mass: str = "exact",
) -> DGMesh:
    """Uniform mesh with ``p`` Gauss-Lobatto nodes per cell.

    ``mass="exact"`` integrates the mass matrix exactly; ``"lumped"`` uses the
    diagonal Gauss-Lobatto collocation mass.
    """
    return DGMesh(x_min, x_max, n_x, p, boundary, left_state, right_state, mass)


@dataclass
class DGState:
    U: Tensor
    t: float = 0.0

    @property
    def data(self) -> np.ndarray:
        return self.U.data


class NoViscosity:
    """The inviscid scheme: mu = 0 everywhere."""

    name = "none"

    def __call__(self, mesh: DGMesh, eq: EquationSpec, U: Tensor) -> Tensor | None:
        return None


def lax_friedrichs(eq: EquationSpec, uL, uR):
    """Local Lax-Friedrichs flux between states ``uL`` and ``uR`` (axis 0 = vars)."""
    uL = np.asarray(uL, dtype=np.float64)
    uR = np.asarray(uR, dtype=np.float64)
    lam = np.maximum(max_wave_speed(eq, uL), max_wave_speed(eq, uR))
    return 0.5 * (flux(eq, uL) + flux(eq, uR)) - 0.5 * lam * (uR - uL)


def _to_vars(mu: Tensor, s: int, n_x: int, p: int) -> Tensor:
    if s == 1:
        return ad.reshape(mu, (1, n_x, p))
    return ad.expand(mu, (s, n_x, p))


def semidiscrete_rhs(mesh: DGMesh, eq: EquationSpec, U: Tensor, mu: Tensor | None) -> Tensor:
    """dU/dt of the viscous DG system for nodal state ``U`` (s, n_x, p).

    ``mu`` is the nodal viscosity (n_x, p) or None for the inviscid scheme.
    """
    U = U if isinstance(U, Tensor) else ad.constant(U)
    s, n_x, p = U.shape
    dirichlet = not mesh.periodic
    gl = mesh.left_state if dirichlet else None
    gr = mesh.right_state if dirichlet else None

    F = flux(eq, U)
    if dirichlet:
        fgl, fgr = flux(eq, gl[:, None])[:, 0], flux(eq, gr[:, None])[:, 0]
        conv = mesh.divergence_op("const", fgl, fgr)(F)
    else:
        conv = mesh.divergence_op("wrap")(F)

    um = mesh.face_op("minus", gl)(U)
    up = mesh.face_op("plus", gr)(U)
    lam = ad.maximum(max_wave_speed(eq, um), max_wave_speed(eq, up))
    jump = ad.sub(up, um)
    if s == 1:
        lam = ad.reshape(lam, (1, n_x + 1))
    else:
        lam = ad.expand(lam, (s, n_x + 1))
    diss = mesh.lift_op()(ad.scale(ad.mul(lam, jump), 0.5))

    if mu is None:
        return ad.lincomb((-1.0, 1.0), (conv, diss))

    Q = mesh.divergence_op("const", gl, gr)(U) if dirichlet else mesh.divergence_op("wrap")(U)
    G = ad.mul(_to_vars(mu, s, n_x, p), Q)
    visc = mesh.divergence_op("mirror")(G)
    return ad.lincomb((1.0, -1.0, 1.0), (visc, conv, diss))


ViscosityModel = Callable[[DGMesh, EquationSpec, Tensor], "Tensor | None"]


def rk4_step(
    mesh: DGMesh,
    eq: EquationSpec,
    state: DGState,
    visc_model: ViscosityModel | None,
    dt: float,
) -> DGState:
    """One classical RK4 step; the viscosity is evaluated once and frozen."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    U = state.U
    mu = visc_model(mesh, eq, U) if visc_model is not None else None
    k1 = semidiscrete_rhs(mesh, eq, U, mu)
    k2 = semidiscrete_rhs(mesh, eq, ad.lincomb((1.0, 0.5 * dt), (U, k1)), mu)
    k3 = semidiscrete_rhs(mesh, eq, ad.lincomb((1.0, 0.5 * dt), (U, k2)), mu)
    k4 = semidiscrete_rhs(mesh, eq, ad.lincomb((1.0, dt), (U, k3)), mu)
    U_new = ad.lincomb((1.0, dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0), (U, k1, k2, k3, k4))
    if not np.isfinite(U_new.data).all():
        raise InstabilityError("non-finite solution")
    return DGState(U_new, state.t + dt)


def cfl_limit(mesh: DGMesh, eq: EquationSpec, U: np.ndarray) -> float:
    lam = float(np.max(max_wave_speed(eq, U)))
    return 0.5 * mesh.dx / ((2 * mesh.p - 1) * max(lam, 1e-300))


def rollout(
    mesh: DGMesh,
    eq: EquationSpec,
    state: DGState,
    visc_model: ViscosityModel | None,
    dt: float,
    n_steps: int,
    record: bool = True,
    stride: int = 1,
    keep: bool = True,
) -> list[DGState]:
    """Compose ``n_steps`` RK4 steps.

    Returns the initial state followed by every ``stride``-th state (the last
    state is always included). With ``keep=False`` only the final state is
    returned. Raises :class:`InstabilityError` carrying the failing step index.
    """
    try:
        limit = cfl_limit(mesh, eq, state.data)
    except InstabilityError as exc:
        raise InstabilityError(exc.reason, step=0) from None
    if dt > limit:
        logger.warning("dt=%.3g exceeds the advisory CFL bound %.3g", dt, limit)

    states = [state]

    def run():
        nonlocal state
        for n in range(1, n_steps + 1):
            try:
                state = rk4_step(mesh, eq, state, visc_model, dt)
            except InstabilityError as exc:
                raise InstabilityError(exc.reason, step=n) from None
            if keep and (n % stride == 0 or n == n_steps):
                states.append(state)

    if record:
        run()
    else:
        with ad.no_record():
            run()
    if not keep:
        return [state]
    return states


def write_snapshot_csv(path, mesh: DGMesh, state: DGState, mu=None) -> None:
    """Node-ordered snapshot: x, var_1..var_s, mu."""
    U = state.data
    s = U.shape[0]
    x = mesh.x.ravel()
    mu_flat = np.zeros_like(x) if mu is None else np.asarray(getattr(mu, "data", mu)).ravel()
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"var_{i + 1}" for i in range(s)] + ["mu"])
        for i in range(x.size):
            values = [x[i]] + [U[v].ravel()[i] for v in range(s)] + [mu_flat[i]]
            w.writerow([repr(float(v)) for v in values])
