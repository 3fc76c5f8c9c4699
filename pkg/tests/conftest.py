import math

import numpy as np
import pytest

from hfbcollapse.kernels import PotentialSpec
from hfbcollapse.meanfield import Model
from hfbcollapse.radial import build_grid
from hfbcollapse.state import HFBState, HFState


def random_quasi_free(grid, lmax, rng, hfb=True, rank=2, sigma=1.2, chirp=0.3):
    """Random state with ``0 <= Gamma <= 1`` built from smooth orbitals.

    Each sector gets ``2 rank`` orthonormal orbitals mixed by a random
    unitary.  Orbitals are grouped in pairs ``(u, v)`` with a common
    occupation ``n``; for HFB the pair carries ``t (u v^T - v u^T)`` with
    ``t^2 <= n (1 - n)``.
    """
    r = grid.points
    gs, as_ = [], []
    for ell in range(lmax + 1):
        env = np.exp(-r * r / (2 * sigma**2) + 1j * chirp * rng.uniform(-1, 1) * r * r)
        cols = np.stack([grid.to_unitary(r ** (ell + k) * env) for k in range(2 * rank)], axis=1)
        q, _ = np.linalg.qr(cols)
        z = rng.normal(size=(2 * rank, 2 * rank)) + 1j * rng.normal(size=(2 * rank, 2 * rank))
        mix, _ = np.linalg.qr(z)
        q = q @ mix
        g = np.zeros((grid.size, grid.size), dtype=complex)
        a = np.zeros_like(g)
        for j in range(rank):
            u, v = q[:, 2 * j], q[:, 2 * j + 1]
            n = rng.uniform(0.05, 0.95)
            g += n * (np.outer(u, u.conj()) + np.outer(v, v.conj()))
            if hfb:
                t = rng.uniform(0, 1) * math.sqrt(n * (1 - n))
                a += t * (np.outer(u, v) - np.outer(v, u))
        gs.append(g)
        as_.append(a)
    return HFBState(grid, gs, as_) if hfb else HFState(grid, gs)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(32, 12.0, "legendre-mapped")


@pytest.fixture(scope="session")
def small_model(small_grid):
    return Model.build(small_grid, 2, PotentialSpec.newton(0.7, 0.5))


@pytest.fixture(scope="session")
def small_model_gauss(small_grid):
    return Model.build(small_grid, 2, PotentialSpec.gaussian(0.7, 0.5, c=0.8, sigma=0.7))


#: one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
