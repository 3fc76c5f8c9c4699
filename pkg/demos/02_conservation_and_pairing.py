"""
Conservation laws and what pairing changes
==========================================

Hartree-Fock dynamics conserves the energy, the particle number and every
sector population, hence ``Tr |L|^2 gamma``.  With a pairing function the
sector populations can move: ``Tr |L|^2 gamma`` is no longer constant,
even when the pairing starts out radial.  This script shows both on a small
grid (about half a minute).

Run with ``python demos/02_conservation_and_pairing.py``.
"""

# %%
# A bound Hartree-Fock run
# ------------------------
# Three shells (two orbitals in ``l = 0``, one each in ``l = 1, 2``), a
# massive kinetic term and a weak Newton coupling.

import numpy as np

from hfbcollapse.diagnostics import l2_moment_derivatives
from hfbcollapse.dynamics import IntegratorConfig, integrate, rk4_step
from hfbcollapse.kernels import PotentialSpec
from hfbcollapse.meanfield import Model
from hfbcollapse.radial import build_grid
from hfbcollapse.state import angular_moment, make_initial_data

grid = build_grid(48, 15.0, "legendre-mapped")
model = Model.build(grid, 2, PotentialSpec.newton(0.5, 1.0))
params = {"orbitals": [2, 1, 1], "sigma": 1.5, "chirp": 0.1}
hf, _, _ = make_initial_data("gaussian-shells", params, grid, 2, model.potential, model.kinetics)

traj = integrate(hf, model, IntegratorConfig(t_final=1.0, sample_interval=0.1))
for name in ("energy", "particle_number", "L2_moment"):
    x = traj.series(name)
    print(f"HF  {name:16s} start {x[0]:12.6f}  max relative drift {np.max(np.abs(x - x[0])) / abs(x[0]):.1e}")

# %%
# The same shells with pairing
# ----------------------------
# Partial filling (0.8) leaves room for a pairing function, placed in the
# ``l = 0`` sector.  The density part starts radial, so the first time
# derivative of ``Tr |L|^2 gamma`` vanishes, but the second one does not:
# the pairing field ``kappa V alpha`` has components in every sector.

radial = {"orbitals": [2, 0, 0], "sigma": 1.5, "fill": 0.8}
hfb, _, _ = make_initial_data("gaussian-shells", radial, grid, 2, model.potential, model.kinetics, model="hfb")
first, second, details = l2_moment_derivatives(hfb, model)
print(f"\nformula:  d/dt Tr|L|^2 gamma = {first:.2e},  d2/dt2 = {second:.6e}")

h = 0.01
vals = [angular_moment(s, 2.0) for s in (rk4_step(hfb, model, -h), hfb, rk4_step(hfb, model, h))]
print(f"from RK4 steps: first difference {(vals[2] - vals[0]) / (2 * h):.2e}, "
      f"second difference {(vals[2] - 2 * vals[1] + vals[0]) / h**2:.6e}")

traj = integrate(hfb, model, IntegratorConfig(t_final=1.0, sample_interval=0.1))
print("\n  t     Tr|L|^2 gamma   Tr alpha* alpha   energy")
for m in traj.moments[::2]:
    print(f"{m.time:4.1f}  {m.L2_moment:14.6e}  {m.pairing_mass:14.6f}  {m.energy:.8f}")
