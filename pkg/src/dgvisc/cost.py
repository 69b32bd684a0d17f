"""Solution-quality costs: oscillation, accuracy and viscosity penalties.

The DG solution is compared with the reference after projection onto the fine
grid. For systems each term is the average over the variables.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from dgvisc import autodiff as ad
from dgvisc.autodiff import Tensor
from dgvisc.dg import DGMesh
from dgvisc.fv import project_dg_to_fine

__all__ = [
    "CostWeights",
    "d_xx",
    "c_osc",
    "c_acc",
    "c_visc",
    "step_cost",
    "trajectory_cost",
    "solution_metrics",
    "METRIC_COLUMNS",
    "write_metric_rows",
]


@dataclass(frozen=True)
class CostWeights:
    osc: float = 1e-5
    acc: float = 0.0
    visc: float = 2e3

    def __post_init__(self):
        if min(self.osc, self.acc, self.visc) < 0:
            raise ValueError("cost weights must be nonnegative")
        if max(self.osc, self.acc, self.visc) <= 0:
            raise ValueError("at least one cost weight must be positive")

    def scaled(self, factor: float) -> CostWeights:
        return CostWeights(self.osc * factor, self.acc * factor, self.visc * factor)


def d_xx(fine, dx_ref: float, periodic: bool = True) -> Tensor:
    """Centered second difference along the last axis.

    Periodic input wraps; otherwise only interior cells are returned.
    """
    fine = fine if isinstance(fine, Tensor) else ad.constant(fine)
    if fine.shape[-1] < 3:
        raise ValueError("d_xx needs at least 3 cells")
    c = 1.0 / (dx_ref * dx_ref)
    axis = fine.ndim - 1
    if periodic:
        return ad.lincomb((c, -2.0 * c, c), (ad.roll(fine, 1, axis), fine, ad.roll(fine, -1, axis)))
    return ad.lincomb((c, -2.0 * c, c), (fine[..., :-2], fine[..., 1:-1], fine[..., 2:]))


def _difference(mesh: DGMesh, U, ref_fine) -> Tensor:
    ref = np.asarray(ref_fine, dtype=np.float64)
    return ad.sub(project_dg_to_fine(mesh, U, ref.shape[-1]), ad.constant(ref))


def _osc_from_diff(diff: Tensor, mesh: DGMesh) -> Tensor:
    s, n_ref = diff.shape
    dx_ref = (mesh.x_max - mesh.x_min) / n_ref
    return ad.scale(ad.sum(ad.absolute(d_xx(diff, dx_ref, mesh.periodic))), dx_ref / s)


def _acc_from_diff(diff: Tensor, mesh: DGMesh) -> Tensor:
    s, n_ref = diff.shape
    dx_ref = (mesh.x_max - mesh.x_min) / n_ref
    return ad.scale(ad.sum(ad.absolute(diff)), dx_ref / s)


def c_osc(mesh: DGMesh, U, ref_fine) -> Tensor:
    """dx_ref * sum_i |D_xx(Pi U)_i - D_xx(U_ref)_i|, averaged over variables."""
    return _osc_from_diff(_difference(mesh, U, ref_fine), mesh)


def c_acc(mesh: DGMesh, U, ref_fine) -> Tensor:
    """Discrete L1 distance on the fine grid, averaged over variables."""
    return _acc_from_diff(_difference(mesh, U, ref_fine), mesh)


def c_visc(mesh: DGMesh, mu) -> Tensor:
    """Integral of mu^2 using the Gauss-Lobatto rule on each cell."""
    if mu is None:
        return ad.constant(0.0)
    mu = mu if isinstance(mu, Tensor) else ad.constant(mu)
    w = (0.5 * mesh.dx * mesh.weights)[:, None]
    return ad.sum(ad.matmul(ad.square(mu), w))


def step_cost(weights: CostWeights, mesh: DGMesh, U, ref_fine, mu) -> tuple[Tensor, dict[str, float]]:
    """Weighted one-step cost and the unweighted value of each term."""
    diff = _difference(mesh, U, ref_fine)
    terms = {}
    parts = []
    coeffs = []
    if weights.osc:
        osc = _osc_from_diff(diff, mesh)
        terms["osc"] = float(osc.data)
        parts.append(osc)
        coeffs.append(weights.osc)
    if weights.acc:
        acc = _acc_from_diff(diff, mesh)
        terms["acc"] = float(acc.data)
        parts.append(acc)
        coeffs.append(weights.acc)
    if weights.visc and mu is not None:
        vis = c_visc(mesh, mu)
        terms["visc"] = float(vis.data)
        parts.append(vis)
        coeffs.append(weights.visc)
    if not parts:
        return ad.constant(0.0), terms
    return ad.lincomb(coeffs, parts), terms


def trajectory_cost(weights: CostWeights, mesh: DGMesh, dg_states, ref_states, mu_list) -> Tensor:
    """Sum over aligned steps of the weighted one-step cost."""
    if not (len(dg_states) == len(ref_states) == len(mu_list)):
        raise ValueError(
            f"misaligned trajectory: {len(dg_states)} states, {len(ref_states)} references, {len(mu_list)} viscosities"
        )
    total = ad.constant(0.0)
    for st, ref, mu in zip(dg_states, ref_states, mu_list):
        U = getattr(st, "U", st)
        ref = getattr(ref, "U", ref)
        c, _ = step_cost(weights, mesh, U, ref, mu)
        total = ad.add(total, c)
    return total


def solution_metrics(mesh: DGMesh, U, ref_fine, mu=None) -> dict[str, float]:
    """Unweighted cost terms and squared-L2 / Linf errors on the fine grid."""
    with ad.no_record():
        diff = _difference(mesh, U, ref_fine)
        s, n_ref = diff.shape
        dx_ref = (mesh.x_max - mesh.x_min) / n_ref
        e = diff.data
        return {
            "C_osc": float(_osc_from_diff(diff, mesh).data),
            "C_acc": float(_acc_from_diff(diff, mesh).data),
            "C_visc": float(c_visc(mesh, mu).data),
            "L2": float(dx_ref * np.sum(e * e) / s),
            "Linf": float(np.mean(np.max(np.abs(e), axis=1))),
        }


METRIC_COLUMNS = ["model", "cells", "C_osc", "C_acc", "C_visc", "L2", "Linf"]


def write_metric_rows(path, rows: list[dict]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in rows:
            w.writerow([row["model"], row["cells"]] + [f"{row[k]:.6e}" for k in METRIC_COLUMNS[2:]])
