"""Run a test case with a given viscosity and score it against the fine reference."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from dgvisc import autodiff as ad
from dgvisc.baselines import DBViscosity, MDHViscosity
from dgvisc.cost import solution_metrics
from dgvisc.datagen import TestCase, project_ic_to_dg, project_ic_to_fv, test_case
from dgvisc.dg import DGMesh, DGState, NoViscosity, build_mesh, rollout
from dgvisc.fv import FVMesh, reference_rollout

__all__ = ["CaseResult", "reference_cells", "case_mesh", "make_model", "reference_solution", "run_case"]

logger = logging.getLogger(__name__)

REFERENCE_CELLS = 2048


def reference_cells(n_x: int, target: int = REFERENCE_CELLS) -> int:
    """Smallest multiple of n_x that is at least ``target``."""
    return n_x * math.ceil(target / n_x)


def case_mesh(case: TestCase, n_x: int, p: int = 4, mass: str = "exact") -> DGMesh:
    left, right = case.boundary_states()
    return build_mesh(case.x_min, case.x_max, n_x, p, case.boundary, left, right, mass)


def make_model(name: str):
    if name == "none":
        return NoViscosity()
    if name == "db":
        return DBViscosity()
    if name == "mdh":
        return MDHViscosity()
    raise ValueError(f"unknown viscosity model {name!r}")


_reference_cache: dict = {}


def reference_solution(case: TestCase, n_ref: int, dt: float, n_steps: int, kind: str = "auto") -> np.ndarray:
    """Fine-grid reference after ``n_steps`` steps of size ``dt``.

    ``kind="fv"`` runs the MUSCL scheme (cached per process); ``"exact"``
    averages the analytic solution over the fine cells; ``"auto"`` picks the
    analytic one when the case has it.
    """
    if kind == "auto":
        kind = "exact" if case.exact is not None else "fv"
    left, right = case.boundary_states()
    mesh = FVMesh(case.x_min, case.x_max, n_ref, case.boundary, left, right)
    if kind == "exact":
        if case.exact is None:
            raise ValueError(f"case {case.name!r} has no analytic solution")
        t = n_steps * dt
        return project_ic_to_fv(lambda x: case.exact(x, t), mesh).U
    if kind != "fv":
        raise ValueError(f"unknown reference kind {kind!r}")
    key = (case.name, n_ref, dt, n_steps)
    if key not in _reference_cache:
        start = project_ic_to_fv(case.ic, mesh)
        _reference_cache[key] = reference_rollout(case.equation, mesh, start, dt, 1, n_steps)[-1].U
    return _reference_cache[key]


@dataclass
class CaseResult:
    mesh: DGMesh
    state: DGState
    mu: np.ndarray | None
    reference: np.ndarray
    metrics: dict[str, float]


def n_steps_for(t_final: float, dt: float) -> int:
    n = round(t_final / dt)
    if abs(n * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final={t_final} is not a multiple of dt={dt}")
    return n


def run_case(
    case: TestCase | str,
    model,
    n_x: int,
    dt: float = 1e-5,
    p: int = 4,
    t_final: float | None = None,
    n_ref: int | None = None,
    reference: str = "auto",
    mass: str = "exact",
) -> CaseResult:
    """Solve ``case`` with DG + ``model`` and with the fine reference; compare at the end.

    Raises :class:`~dgvisc.equations.InstabilityError` if the DG run fails.
    """
    case = test_case(case) if isinstance(case, str) else case
    model = make_model(model) if isinstance(model, str) else model
    t_final = case.t_final if t_final is None else t_final
    n_steps = n_steps_for(t_final, dt)
    mesh = case_mesh(case, n_x, p, mass)
    n_ref = reference_cells(n_x) if n_ref is None else n_ref

    start = project_ic_to_dg(case.ic, mesh)
    final = rollout(mesh, case.equation, start, model, dt, n_steps, record=False, keep=False)[-1]
    with ad.no_record():
        mu = model(mesh, case.equation, final.U)
    mu_data = None if mu is None else mu.data
    ref = reference_solution(case, n_ref, dt, n_steps, reference)
    metrics = solution_metrics(mesh, final.U, ref, mu_data)
    return CaseResult(mesh, final, mu_data, ref, metrics)
