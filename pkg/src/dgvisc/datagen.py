"""Initial conditions: random Fourier series for training and the fixed test cases."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

from dgvisc import autodiff as ad
from dgvisc.dg import DGMesh, DGState
from dgvisc.equations import EquationSpec, primitive_to_conservative
from dgvisc.fv import FVMesh, FVState

__all__ = [
    "FourierIC",
    "sample_fourier_ic",
    "training_ic",
    "composite_advection_ic",
    "burgers_sine_ic",
    "sod_ic",
    "shu_osher_ic",
    "project_ic_to_dg",
    "project_ic_to_fv",
    "TestCase",
    "test_case",
]

N_MODES = 20
EPSILON = 0.1
SEARCH_POINTS = 4096


@dataclass
class FourierIC:
    """Truncated Fourier series sum_n a_n/n cos(2 pi n x) + b_n/n sin(2 pi n x)."""

    a: np.ndarray
    b: np.ndarray
    shift: float = 0.0
    seed: int | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        n = np.arange(1, len(self.a) + 1)
        arg = 2.0 * np.pi * np.multiply.outer(x, n)
        return (np.cos(arg) @ (self.a / n) + np.sin(arg) @ (self.b / n)) + self.shift

    def describe(self) -> dict:
        return {"seed": self.seed, "shift": self.shift, "a": self.a.tolist(), "b": self.b.tolist()}


def _make_positive(f: FourierIC) -> FourierIC:
    grid = np.linspace(0.0, 1.0, SEARCH_POINTS, endpoint=False)
    f.shift = float(-(f(grid).min() - f.shift) + EPSILON)
    return f


def sample_fourier_ic(seed, positive: bool = False, rng: np.random.Generator | None = None) -> FourierIC:
    """Random series with coefficients uniform on [-1, 1].

    With ``positive``, the sampled minimum (on a 4096-point grid) is removed
    and 0.1 added.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    a = rng.uniform(-1.0, 1.0, N_MODES)
    b = rng.uniform(-1.0, 1.0, N_MODES)
    f = FourierIC(a, b, seed=None if isinstance(seed, np.random.Generator) else seed)
    return _make_positive(f) if positive else f


def training_ic(eq: EquationSpec, rng: np.random.Generator) -> tuple[Callable, list[dict]]:
    """A random training IC returning conservative variables, shape (s, ...).

    Burgers data is kept positive; Euler samples (rho, u, p) with positive
    density and pressure.
    """
    if eq.name == "euler":
        parts = [
            sample_fourier_ic(None, positive=True, rng=rng),
            sample_fourier_ic(None, positive=False, rng=rng),
            sample_fourier_ic(None, positive=True, rng=rng),
        ]

        def f(x):
            return primitive_to_conservative(eq, np.stack([g(x) for g in parts]))

    else:
        parts = [sample_fourier_ic(None, positive=eq.name == "burgers", rng=rng)]

        def f(x):
            return parts[0](x)[None]

    return f, [g.describe() for g in parts]


def composite_advection_ic(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    m = x < 0.25
    out[m] = np.exp(-(((x[m] - 0.125) / 0.03) ** 2))
    m = (x >= 5 / 16) & (x < 7 / 16)
    out[m] = 1.0
    m = (x >= 9 / 16) & (x < 11 / 16)
    out[m] = 1.0 - np.abs((x[m] - 5 / 8) * 16)
    m = (x >= 13 / 16) & (x < 15 / 16)
    out[m] = np.sqrt(np.maximum(1.0 - (16 * x[m] - 14) ** 2, 0.0))
    return 1.0 + out


def burgers_sine_ic(x):
    return 1.0 + np.sin(2.0 * np.pi * np.asarray(x, dtype=np.float64))


def sod_ic(x):
    """Primitive (rho, u, p), shape (3, ...)."""
    x = np.asarray(x, dtype=np.float64)
    left = x < 0.5
    return np.stack([np.where(left, 1.0, 0.125), np.zeros_like(x), np.where(left, 1.0, 0.1)])


def shu_osher_ic(x):
    """Primitive (rho, u, p), shape (3, ...)."""
    x = np.asarray(x, dtype=np.float64)
    left = x < -4.0
    return np.stack(
        [
            np.where(left, 3.857143, 1.0 + 0.2 * np.sin(5.0 * x)),
            np.where(left, 2.629369, 0.0),
            np.where(left, 10.333333, 1.0),
        ]
    )


def _vector_valued(f: Callable, x: np.ndarray) -> np.ndarray:
    v = np.asarray(f(x), dtype=np.float64)
    return v if v.ndim == x.ndim + 1 else v[None]


def project_ic_to_dg(f: Callable, mesh: DGMesh) -> DGState:
    """Nodal interpolation at the Gauss-Lobatto points."""
    return DGState(ad.constant(_vector_valued(f, mesh.x)), 0.0)


def project_ic_to_fv(f: Callable, mesh: FVMesh) -> FVState:
    """Cell averages with 4-point Gauss quadrature per cell."""
    xq, wq = npleg.leggauss(4)
    pts = mesh.centers[:, None] + 0.5 * mesh.dx * xq[None, :]
    vals = _vector_valued(f, pts)
    return FVState(vals @ (0.5 * wq), 0.0)


@dataclass
class TestCase:
    """A fixed evaluation problem: conservative IC, domain, boundary, end time."""

    __test__ = False

    name: str
    equation: EquationSpec
    ic: Callable
    x_min: float
    x_max: float
    boundary: str
    t_final: float
    exact: Callable | None = None

    def boundary_states(self):
        if self.boundary == "periodic":
            return None, None
        ends = _vector_valued(self.ic, np.array([self.x_min, self.x_max]))
        return ends[:, 0], ends[:, 1]


def test_case(name: str) -> TestCase:
    from dgvisc.equations import advection, burgers, euler

    if name == "composite":
        return TestCase(
            name,
            advection(),
            composite_advection_ic,
            0.0,
            1.0,
            "periodic",
            2.0,
            exact=lambda x, t: composite_advection_ic(np.mod(np.asarray(x) - t, 1.0)),
        )
    if name == "burgers_sine":
        return TestCase(name, burgers(), burgers_sine_ic, 0.0, 1.0, "periodic", 1.0)
    if name == "sod":
        eq = euler()
        return TestCase(name, eq, lambda x: primitive_to_conservative(eq, sod_ic(x)), 0.0, 1.0, "dirichlet", 0.2)
    if name == "shu_osher":
        eq = euler()
        return TestCase(
            name, eq, lambda x: primitive_to_conservative(eq, shu_osher_ic(x)), -5.0, 5.0, "dirichlet", 1.8
        )
    raise ValueError(f"unknown test case {name!r}")


test_case.__test__ = False
