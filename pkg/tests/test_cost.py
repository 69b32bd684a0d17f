import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dgvisc import autodiff as ad
from dgvisc.cost import (
    METRIC_COLUMNS,
    CostWeights,
    c_acc,
    c_osc,
    c_visc,
    d_xx,
    solution_metrics,
    step_cost,
    trajectory_cost,
    write_metric_rows,
)
from dgvisc.dg import build_mesh
from dgvisc.fv import project_dg_to_fine


def test_d_xx_examples():
    assert d_xx(np.array([1.0, 2.0, 4.0]), 1.0, periodic=False).data.tolist() == [1.0]
    np.testing.assert_allclose(d_xx(np.full(8, 3.0), 0.1).data, 0.0)
    np.testing.assert_allclose(d_xx(np.arange(8.0), 0.5, periodic=False).data, 0.0, atol=1e-12)
    with pytest.raises(ValueError):
        d_xx(np.ones(2), 1.0)


def test_d_xx_periodic_wraps():
    got = d_xx(np.array([0.0, 1.0, 0.0, 0.0]), 1.0).data
    np.testing.assert_array_equal(got, [1.0, -2.0, 1.0, 0.0])


def test_identical_solution_costs_nothing():
    mesh = build_mesh(0.0, 1.0, 8, 4)
    U = np.sin(2 * np.pi * mesh.x)[None]
    ref = project_dg_to_fine(mesh, U, 64)
    assert c_osc(mesh, U, ref).data == pytest.approx(0.0, abs=1e-9)
    assert c_acc(mesh, U, ref).data == pytest.approx(0.0, abs=1e-15)


def test_unit_spike_gives_four_over_dx_ref():
    mesh = build_mesh(0.0, 1.0, 16, 4)
    U = np.zeros((1, 16, 4))
    U[0, 5] = 1.0
    assert c_osc(mesh, U, np.zeros((1, 16))).data == pytest.approx(4.0 * 16, rel=1e-12)


def test_constant_offset_accuracy():
    mesh = build_mesh(0.0, 1.0, 8, 4)
    assert c_acc(mesh, np.full((1, 8, 4), 0.3), np.zeros((1, 32))).data == pytest.approx(0.3, rel=1e-12)


def test_system_costs_average_over_variables():
    mesh = build_mesh(0.0, 1.0, 4, 4)
    U = np.stack([np.full((4, 4), 0.2), np.full((4, 4), 0.4), np.zeros((4, 4))])
    assert c_acc(mesh, U, np.zeros((3, 8))).data == pytest.approx(0.2, rel=1e-12)


def test_visc_examples():
    # mu = x on the cell [0, 1], zero on the second cell
    two = build_mesh(0.0, 2.0, 2, 4)
    mu = two.x.copy()
    mu[1] = 0.0
    assert c_visc(two, mu).data == pytest.approx(1.0 / 3.0, abs=1e-14)
    mesh = build_mesh(0.0, 1.0, 8, 4)
    assert c_visc(mesh, np.full((8, 4), 0.25)).data == pytest.approx(0.0625, rel=1e-13)
    assert c_visc(mesh, np.zeros((8, 4))).data == 0.0
    assert c_visc(mesh, None).data == 0.0


def test_weights_validation():
    with pytest.raises(ValueError):
        CostWeights(0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        CostWeights(-1.0, 1.0, 1.0)
    assert CostWeights(1.0, 0.0, 0.0).scaled(2.0) == CostWeights(2.0, 0.0, 0.0)


def _random_problem(seed, n=8, n_ref=32):
    rng = np.random.default_rng(seed)
    mesh = build_mesh(0.0, 1.0, n, 4)
    return mesh, rng.normal(size=(1, n, 4)), rng.normal(size=(1, n_ref)), np.abs(rng.normal(size=(n, 4)))


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_cost_is_linear_in_weights(seed, factor):
    mesh, U, ref, mu = _random_problem(seed)
    w = CostWeights(1e-3, 0.5, 2.0)
    base, terms = step_cost(w, mesh, U, ref, mu)
    scaled, _ = step_cost(w.scaled(factor), mesh, U, ref, mu)
    assert scaled.data == pytest.approx(factor * base.data, rel=1e-12)
    assert all(v >= 0 for v in terms.values())


@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_cost_invariant_under_cyclic_shift(seed, shift):
    mesh, U, ref, _ = _random_problem(seed)
    ratio = ref.shape[1] // mesh.n_x
    U2 = np.roll(U, shift, axis=1)
    ref2 = np.roll(ref, shift * ratio, axis=1)
    assert c_osc(mesh, U2, ref2).data == pytest.approx(c_osc(mesh, U, ref).data, rel=1e-12)
    assert c_acc(mesh, U2, ref2).data == pytest.approx(c_acc(mesh, U, ref).data, rel=1e-12)


def test_trajectory_cost_sums_steps():
    w = CostWeights(1e-3, 1.0, 2.0)
    problems = [_random_problem(s) for s in range(3)]
    mesh = problems[0][0]
    total = trajectory_cost(w, mesh, [p[1] for p in problems], [p[2] for p in problems], [p[3] for p in problems])
    each = [step_cost(w, mesh, p[1], p[2], p[3])[0].data for p in problems]
    assert total.data == pytest.approx(sum(each), rel=1e-13)
    single = trajectory_cost(w, mesh, [problems[0][1]], [problems[0][2]], [problems[0][3]])
    assert single.data == pytest.approx(each[0], rel=1e-15)


def test_trajectory_cost_rejects_misaligned_lists():
    mesh, U, ref, mu = _random_problem(0)
    with pytest.raises(ValueError, match="misaligned"):
        trajectory_cost(CostWeights(), mesh, [U, U], [ref], [mu, mu])


def test_trajectory_cost_gradient_matches_finite_differences():
    mesh, U, ref, mu = _random_problem(4)
    w = CostWeights(1e-3, 1.0, 2.0)

    def value(U, mu):
        return float(trajectory_cost(w, mesh, [U], [ref], [mu]).data)

    tape = ad.Tape()
    Ut = tape.parameter("U", U)
    mut = tape.parameter("mu", mu)
    g = tape.backward(trajectory_cost(w, mesh, [Ut], [ref], [mut]))
    h = 1e-6
    for name, base in (("U", U), ("mu", mu)):
        fd = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += h
            minus[idx] -= h
            args_p = (plus, mu) if name == "U" else (U, plus)
            args_m = (minus, mu) if name == "U" else (U, minus)
            fd[idx] = (value(*args_p) - value(*args_m)) / (2 * h)
        assert np.linalg.norm(g[name] - fd) <= 1e-6 * np.linalg.norm(fd)


def test_metrics_and_csv(tmp_path):
    mesh = build_mesh(0.0, 1.0, 4, 4)
    U = np.stack([np.full((4, 4), 0.5), np.zeros((4, 4))])
    ref = np.zeros((2, 8))
    ref[1, 3] = -2.0
    m = solution_metrics(mesh, U, ref)
    # squared L2 and Linf, both averaged over the variables
    assert m["L2"] == pytest.approx((0.25 + 4.0 / 8) / 2, rel=1e-12)
    assert m["Linf"] == pytest.approx((0.5 + 2.0) / 2, rel=1e-12)
    assert m["C_visc"] == 0.0
    path = tmp_path / "m.csv"
    write_metric_rows(path, [{"model": "db", "cells": 4, **m}])
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == METRIC_COLUMNS
    assert rows[1][:2] == ["db", "4"]
    assert float(rows[1][6]) == pytest.approx(1.25)
