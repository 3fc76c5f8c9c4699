"""Sector blocks of the HF mean-field operator and the HFB pairing field.

Multiplying a two-body kernel by ``V(x - y)`` is an entrywise operation in
``(r, r')`` once the angles are expanded: for a rotation-invariant kernel
with sector blocks ``X_l``, the product ``V(x-y) X(x,y)`` has blocks

    c2 sum_{l', m} (2l'+1)(2m+1) G(l, l', m) F_{m,0} o X_l',

with ``o`` the Hadamard product.  This single formula gives the exchange
operator (``X = gamma``) and the pairing field (``X = alpha``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import build_kernel_table, direct_potential
from .legendre import GauntTable
from .radial import build_dilation, build_kinetic, position
from .state import CONSTANTS, density

__all__ = [
    "Model",
    "MeanFieldBlocks",
    "StaleBlocksError",
    "coupled_block",
    "exchange_block",
    "pairing_block",
    "g_alpha_term",
    "assemble",
]


class StaleBlocksError(RuntimeError):
    """Mean-field blocks used with a state they were not built from."""


@dataclass(eq=False)
class Model:
    """Everything that is fixed during a run: grid, potential, kernels, operators.

    ``kinetics`` holds ``K_0 .. K_{lmax+1}`` (one guard sector for the virial
    operator ``M``).  ``massless`` holds ``(-Delta)^(1/2)`` per sector when the
    mass is positive, otherwise it aliases ``kinetics``.
    """

    grid: object
    lmax: int
    potential: object
    gaunt: GauntTable
    table: object
    kinetics: list
    massless: list
    dilation: object
    radius: object = field(repr=False, default=None)
    cutoff: int | None = None

    def __post_init__(self):
        if self.cutoff is None:
            self.cutoff = self.lmax
        if not 0 <= self.cutoff <= self.lmax:
            raise ValueError("cutoff must lie between 0 and the represented lmax")

    @classmethod
    def build(cls, grid, lmax, potential, gaunt=None, cutoff=None):
        """Build kernels and operators for sectors ``0..lmax``.

        ``cutoff`` (default ``lmax``) is the largest sector on which the
        mean field acts; sectors above it are frozen.
        """
        gaunt = gaunt or GauntTable.build(max(2 * lmax, 1))
        table = build_kernel_table(lmax, grid, potential, gaunt)
        kinetics = [build_kinetic(ell, potential.mass, grid) for ell in range(lmax + 2)]
        if potential.mass > 0:
            massless = [build_kinetic(ell, 0.0, grid) for ell in range(lmax + 2)]
        else:
            massless = kinetics
        return cls(grid, lmax, potential, gaunt, table, kinetics, massless,
                   build_dilation(grid), position(grid), cutoff)

    @property
    def kappa(self):
        return self.potential.kappa

    def with_potential(self, potential):
        """Same grid and cutoff with a new coupling (kernels are reused if only kappa changed)."""
        old = self.potential
        if potential.name == old.name and potential.params == old.params and potential.mass == old.mass:
            table = type(self.table)(self.table.lmax, self.grid, potential, self.gaunt,
                                     self.table.F, self.table.multipoles)
            return Model(self.grid, self.lmax, potential, self.gaunt, table, self.kinetics,
                         self.massless, self.dilation, self.radius, self.cutoff)
        return Model.build(self.grid, self.lmax, potential, self.gaunt, self.cutoff)

    def manifest(self):
        return {
            "grid": self.grid.spec(),
            "lmax": self.lmax,
            "cutoff": self.cutoff,
            "potential": self.potential.to_json(),
            "constants": CONSTANTS,
            "gaunt_degree": self.gaunt.max_degree,
        }


@dataclass(eq=False)
class MeanFieldBlocks:
    """``H_l = K_l + kappa diag(V*rho) - kappa X_l`` and ``Pi_l`` for one state."""

    H: list
    Pi: list | None
    exchange: list
    potential: np.ndarray
    stamp: int

    def check(self, state):
        if state.stamp != self.stamp:
            raise StaleBlocksError(
                f"blocks were built for state {self.stamp}, used with state {state.stamp}")


def coupled_block(ell, blocks, table):
    """Sector ``ell`` of ``V(x - y) X(x, y)`` for kernel blocks ``X_l'`` (no kappa)."""
    gaunt = table.gaunt
    out = np.zeros_like(blocks[0])
    for lp, xb in enumerate(blocks):
        if not np.any(xb):
            continue
        if lp > table.lmax or ell > table.lmax:
            raise IndexError(f"kernel table covers sectors up to {table.lmax}")
        for m in range(abs(ell - lp), ell + lp + 1):
            gval = gaunt(ell, lp, m)
            if gval != 0.0:
                out += ((2 * lp + 1) * (2 * m + 1) * gval) * table.multipoles[m] * xb
    return CONSTANTS["c2"] * out


def exchange_block(ell, state, table):
    """Exchange operator block ``X_l`` (hermitian when the ``G_l'`` are)."""
    return coupled_block(ell, state.g, table)


def pairing_block(ell, state, table):
    """Pairing field block ``Pi_l = kappa (V alpha)_l`` (antisymmetric)."""
    if not state.is_hfb:
        return np.zeros_like(state.g[0])
    return table.potential.kappa * coupled_block(ell, state.a, table)


def g_alpha_term(state, table, Pi=None):
    """Blocks of ``G_alpha = -i (Pi alpha* - alpha Pi*)``.

    This is the operator whose kernel is
    ``i kappa int alpha(x,z) conj(alpha(y,z)) (V(y-z) - V(x-z)) dz``; each
    block is hermitian and the weighted total trace vanishes.
    """
    if Pi is None:
        Pi = [pairing_block(ell, state, table) for ell in range(state.lmax + 1)]
    out = []
    for p, a in zip(Pi, state.a):
        pa = p @ a.conj().T
        out.append(-1j * (pa - pa.conj().T))
    return out


def assemble(state, model):
    """Build :class:`MeanFieldBlocks` for ``state``.

    Sectors above ``model.cutoff`` get zero blocks: the cutoff flow evolves
    with the projected generator, which leaves those sectors untouched.
    """
    table = model.table
    kappa = model.kappa
    if state.lmax > table.lmax:
        raise IndexError(f"state has sectors up to {state.lmax}, kernels up to {table.lmax}")
    rho = density(state)
    phi = direct_potential(rho, state.grid, table)
    H, X = [], []
    zero = np.zeros_like(state.g[0])
    for ell in range(state.lmax + 1):
        if ell > model.cutoff:
            H.append(zero)
            X.append(zero)
            continue
        x = exchange_block(ell, state, table)
        h = model.kinetics[ell].matrix + kappa * (np.diag(phi) - x)
        h = 0.5 * (h + h.conj().T)
        H.append(h)
        X.append(x)
    Pi = None
    if state.is_hfb:
        Pi = [pairing_block(ell, state, table) if ell <= model.cutoff else zero
              for ell in range(state.lmax + 1)]
    return MeanFieldBlocks(H, Pi, X, phi, state.stamp)
