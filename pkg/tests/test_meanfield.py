import numpy as np
import pytest
from conftest import random_quasi_free
from hypothesis import given, settings
from hypothesis import strategies as st

from hfbcollapse.kernels import PotentialSpec
from hfbcollapse.meanfield import (
    Model,
    StaleBlocksError,
    assemble,
    exchange_block,
    g_alpha_term,
    pairing_block,
)
from hfbcollapse.radial import build_grid
from hfbcollapse.state import CONSTANTS, HFBState, HFState, energy_parts, hf_energy, hfb_energy

seeds = st.integers(0, 2**31 - 1)
GRID = build_grid(32, 12.0, "legendre-mapped")
MODELS = {
    "newton": Model.build(GRID, 2, PotentialSpec.newton(0.7, 0.5)),
    "gaussian": Model.build(GRID, 2, PotentialSpec.gaussian(0.7, 0.5, c=0.8, sigma=0.7)),
}


def test_zero_coupling_gives_kinetic_blocks():
    model = Model.build(GRID, 2, PotentialSpec.newton(0.0, 0.5))
    blocks = assemble(random_quasi_free(GRID, 2, np.random.default_rng(0)), model)
    for h, k in zip(blocks.H, model.kinetics):
        assert np.array_equal(h, k.matrix)


def test_no_pairing_gives_zero_pairing_field():
    state = random_quasi_free(GRID, 2, np.random.default_rng(0), hfb=False).to_hfb()
    blocks = assemble(state, MODELS["newton"])
    assert all(not np.any(p) for p in blocks.Pi)
    assert all(not np.any(b) for b in g_alpha_term(state, MODELS["newton"].table))
    assert not np.any(pairing_block(0, state.to_hf(), MODELS["newton"].table))


def test_single_sector_exchange_is_one_term():
    model = Model.build(GRID, 0, PotentialSpec.gaussian(0.7, 0.0, c=0.8, sigma=0.7))
    state = random_quasi_free(GRID, 0, np.random.default_rng(4))
    x = exchange_block(0, state, model.table)
    np.testing.assert_allclose(x, CONSTANTS["c2"] * model.table.F[0, 0] * state.g[0] * 2, rtol=1e-13)
    p = pairing_block(0, state, model.table)
    np.testing.assert_allclose(p, 0.7 * CONSTANTS["c2"] * 2 * model.table.F[0, 0] * state.a[0], rtol=1e-13)


def test_zero_state_gives_zero_exchange():
    state = HFState(GRID, [np.zeros((GRID.size,) * 2)] * 3)
    assert all(not np.any(exchange_block(ell, state, MODELS["newton"].table)) for ell in range(3))


@settings(max_examples=15, deadline=None)
@given(seeds, st.sampled_from(sorted(MODELS)))
def test_block_symmetries(seed, which):
    model = MODELS[which]
    state = random_quasi_free(GRID, 2, np.random.default_rng(seed))
    blocks = assemble(state, model)
    for h, x, p in zip(blocks.H, blocks.exchange, blocks.Pi):
        assert np.abs(h - h.conj().T).max() <= 1e-10
        assert np.abs(x - x.conj().T).max() <= 1e-12 * max(1.0, np.abs(x).max())
        assert np.abs(p + p.T).max() <= 1e-12 * max(1.0, np.abs(p).max())
    ga = g_alpha_term(state, model.table, blocks.Pi)
    alpha2 = sum(m * np.sum(np.abs(a) ** 2) for m, a in zip(state.multiplicities(), state.a))
    assert all(np.abs(b - b.conj().T).max() <= 1e-12 for b in ga)
    total = sum(m * np.trace(b) for m, b in zip(state.multiplicities(), ga))
    assert abs(total) <= 1e-10 * max(alpha2, 1.0)


@settings(max_examples=10, deadline=None)
@given(seeds, st.sampled_from(sorted(MODELS)))
def test_energy_bookkeeping(seed, which):
    model = MODELS[which]
    state = random_quasi_free(GRID, 2, np.random.default_rng(seed))
    parts = energy_parts(state, model.table, model.kinetics)
    blocks = assemble(state, model)
    mult = state.multiplicities()
    # exchange energy from the blocks and from the two-body pairing formula
    ex = -0.5 * model.kappa * sum(m * np.trace(x @ g).real for m, x, g in zip(mult, blocks.exchange, state.g))
    assert ex == pytest.approx(parts["exchange"], rel=1e-10)
    # Tr H gamma counts the interaction twice
    tr = sum(m * np.trace(h @ g).real for m, h, g in zip(mult, blocks.H, state.g))
    assert tr == pytest.approx(parts["kinetic"] + 2 * parts["direct"] + 2 * parts["exchange"], rel=1e-10)
    pair = 0.5 * sum(m * np.sum(p.conj() * a).real for m, p, a in zip(mult, blocks.Pi, state.a))
    assert pair == pytest.approx(parts["pairing"], rel=1e-10)


@pytest.mark.parametrize("which", sorted(MODELS))
def test_mean_field_is_energy_gradient(which):
    model = MODELS[which]
    rng = np.random.default_rng(7)
    state = random_quasi_free(GRID, 2, rng)
    blocks = assemble(state, model)
    mult = state.multiplicities()
    dg = [rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape) for g in state.g]
    dg = [0.5 * (d + d.conj().T) for d in dg]
    da = [rng.normal(size=a.shape) + 1j * rng.normal(size=a.shape) for a in state.a]
    da = [d - d.T for d in da]
    eps = 1e-6

    def energy(sign):
        s = HFBState(GRID, [g + sign * eps * d for g, d in zip(state.g, dg)],
                     [a + sign * eps * d for a, d in zip(state.a, da)])
        return hfb_energy(s, model.table, model.kinetics)

    fd = (energy(1) - energy(-1)) / (2 * eps)
    pred = sum(m * np.trace(h @ d).real for m, h, d in zip(mult, blocks.H, dg))
    pred += sum(m * np.sum(p.conj() * d).real for m, p, d in zip(mult, blocks.Pi, da))
    assert fd == pytest.approx(pred, rel=1e-7)


def test_assemble_is_idempotent_and_stamped():
    model = MODELS["gaussian"]
    state = random_quasi_free(GRID, 2, np.random.default_rng(1))
    b1, b2 = assemble(state, model), assemble(state, model)
    for x, y in zip(b1.H + b1.Pi, b2.H + b2.Pi):
        assert np.array_equal(x, y)
    b1.check(state)
    with pytest.raises(StaleBlocksError):
        b1.check(state.replace())


def test_cutoff_zeroes_upper_blocks():
    model = Model.build(GRID, 2, PotentialSpec.newton(0.7, 0.5), cutoff=1)
    blocks = assemble(random_quasi_free(GRID, 2, np.random.default_rng(0)), model)
    assert not np.any(blocks.H[2]) and not np.any(blocks.Pi[2])
    assert np.any(blocks.H[1])
    with pytest.raises(ValueError):
        Model.build(GRID, 1, PotentialSpec.newton(0.7, 0.5), cutoff=2)


def test_state_beyond_kernel_table_is_rejected():
    model = Model.build(GRID, 1, PotentialSpec.newton(0.7, 0.5))
    with pytest.raises(IndexError):
        assemble(random_quasi_free(GRID, 2, np.random.default_rng(0)), model)


def test_with_potential_reuses_kernels_for_new_coupling():
    model = MODELS["gaussian"]
    other = model.with_potential(model.potential.with_kappa(1.4))
    assert other.table.F is model.table.F and other.kappa == 1.4
    state = random_quasi_free(GRID, 2, np.random.default_rng(2), hfb=False)
    e1 = energy_parts(state, model.table, model.kinetics)
    e2 = energy_parts(state, other.table, other.kinetics)
    assert e2["direct"] == pytest.approx(2 * e1["direct"], rel=1e-13)
    assert hf_energy(state, other.table, other.kinetics) < hf_energy(state, model.table, model.kinetics)
    rebuilt = model.with_potential(PotentialSpec.newton(0.7, 0.5))
    assert rebuilt.table.F is not model.table.F
