import math

import numpy as np
import pytest
from conftest import random_quasi_free
from hypothesis import given, settings
from hypothesis import strategies as st

from hfbcollapse.kernels import PotentialSpec
from hfbcollapse.meanfield import Model
from hfbcollapse.oracle import (
    MAX_POINTS,
    TensorGrid,
    apply_angular,
    brute_trace_ops,
    compare_observables,
    lift,
    lift_kernel,
    project_to_sectors,
    random_small_state,
    rotation_matrix,
)
from hfbcollapse.radial import build_grid
from hfbcollapse.state import HFState, angular_moment, particle_number

GRID = build_grid(32, 10.0, "legendre-mapped")
SMOOTH = build_grid(128, 7.0, "uniform")
TGRID = TensorGrid(8, 3.4)


def test_tensor_grid_layout():
    tg = TensorGrid(8, 2.0)
    assert tg.points.shape == (512, 3)
    assert tg.h == pytest.approx(0.5) and tg.volume == pytest.approx(0.125)
    assert tg.radii.min() > 0
    assert tg.refined(2).n == 16 and tg.refined(2).half_width == 2.0
    with pytest.raises(ValueError):
        TensorGrid(1, 1.0)
    with pytest.raises(ValueError):
        TensorGrid(4, 0.0)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 0.1),
       st.floats(-math.pi, math.pi))
def test_rotation_matrix_is_proper(axis, angle):
    rot = rotation_matrix(axis, angle)
    assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(rot) == pytest.approx(1.0)
    assert np.allclose(rot @ np.asarray(axis), axis)


def test_sector_round_trip():
    state = random_quasi_free(GRID, 2, np.random.default_rng(0))
    for blocks in (state.g, state.a):
        back = project_to_sectors(lambda X, Y: lift_kernel(blocks, GRID, X, Y), GRID, 2)
        for b, c in zip(blocks, back):
            assert np.abs(b - c).max() <= 1e-8 * np.abs(b).max()


def test_zero_blocks_round_trip_to_zero():
    zero = [np.zeros((GRID.size,) * 2)] * 2
    back = project_to_sectors(lambda X, Y: lift_kernel(zero, GRID, X, Y), GRID, 1)
    assert all(not np.any(b) for b in back)


def test_lifted_kernels_are_rotation_invariant_and_symmetric():
    state = random_quasi_free(GRID, 2, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    X, Y = rng.normal(size=(20, 3)), rng.normal(size=(15, 3))
    rot = rotation_matrix([0.3, -1.0, 0.5], 1.1)
    for blocks in (state.g, state.a):
        k = lift_kernel(blocks, GRID, X, Y)
        assert np.abs(lift_kernel(blocks, GRID, X @ rot.T, Y @ rot.T) - k).max() <= 1e-12 * np.abs(k).max()
    g = lift_kernel(state.g, GRID, X, X)
    a = lift_kernel(state.a, GRID, X, X)
    assert np.abs(g - g.conj().T).max() <= 1e-13
    assert np.abs(a + a.T).max() <= 1e-13


def test_lift_guards():
    state = random_small_state(SMOOTH, 1, np.random.default_rng(0))
    with pytest.raises(ValueError, match="dense-kernel guard"):
        lift(state, TensorGrid(round(MAX_POINTS ** (1 / 3)) + 1, 3.0))
    with pytest.raises(ValueError, match="beyond the radial box"):
        lift(state, TensorGrid(6, 5.0))
    with pytest.raises(ValueError, match="origin"):
        lift_kernel(state.g, SMOOTH, np.zeros((1, 3)), np.ones((1, 3)))
    with pytest.raises(ValueError):
        brute_trace_ops(lift(state, TensorGrid(6, 3.0)), "energy")


def test_random_small_state_is_quasi_free():
    state = random_small_state(SMOOTH, 2, np.random.default_rng(3))
    from hfbcollapse.state import constraint_defects

    pauli, bogo, _ = constraint_defects(state)
    assert pauli <= 1e-12 and bogo <= 1e-12
    assert all(not np.any(a) for a in state.a[1:])


def test_brute_traces_of_single_sector_state():
    # one p-wave orbital: Tr gamma = 3 n, Tr |L|^2 gamma = 2 * 3 n
    r = SMOOTH.points
    u = SMOOTH.to_unitary(r * np.exp(-r * r / 2))
    u /= np.linalg.norm(u)
    g1 = 0.6 * np.outer(u, u)
    state = HFState(SMOOTH, [np.zeros_like(g1), g1])
    lf = lift(state, TensorGrid(10, 3.7))
    assert particle_number(state) == pytest.approx(1.8)
    assert brute_trace_ops(lf, "trace") == pytest.approx(1.8, rel=1e-3)
    assert brute_trace_ops(lf, "L2") == pytest.approx(angular_moment(state, 2.0), rel=1e-3)


def test_angular_operator_annihilates_radial_functions():
    tg = TensorGrid(10, 3.7)
    rad = np.exp(-tg.radii**2 / 2)[:, None]
    comps = apply_angular(rad, tg)
    assert max(np.abs(c).max() for c in comps) <= 1e-3 * np.abs(rad).max()


def test_fast_oracle_comparison():
    model = Model.build(SMOOTH, 1, PotentialSpec.newton(0.7, 0.5))
    state = random_small_state(SMOOTH, 1, np.random.default_rng(0))
    errs = compare_observables(state, model, TGRID)
    assert {"trace", "L2", "M", "A", "rho", "V_rho", "energy_exchange", "R_gamma", "G_alpha"} <= set(errs)
    assert max(errs.values()) <= 1e-2
