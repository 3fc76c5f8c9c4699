"""
Sector building blocks
======================

A spherically symmetric one-body state is a list of radial matrices, one per
angular momentum sector ``l``.  This script walks through the pieces the
solver is assembled from: Legendre/Gaunt tables, radial grids, the
semirelativistic kinetic operator per sector, and the angle-integrated
interaction kernels.

Run with ``python demos/01_sector_building_blocks.py``.
"""

# %%
# Gaunt integrals
# ---------------
# ``G(l1, l2, l3) = int P_l1 P_l2 P_l3 dt`` couples sectors whenever a radial
# two-body potential multiplies a product of Legendre polynomials.  It
# vanishes unless the triangle and parity rules hold.

import numpy as np

from hfbcollapse.kernels import PotentialSpec, build_kernel_table, verify_kernel_bounds
from hfbcollapse.legendre import GauntTable, gap_ratio, gap_ratio_bound
from hfbcollapse.radial import build_grid, build_kinetic

table = GauntTable.build(4)
for triple in [(0, 0, 0), (1, 1, 0), (1, 1, 2), (1, 1, 1), (2, 2, 4), (1, 2, 4)]:
    print(f"G{triple} = {table(*triple):.6f}")

# %%
# Gap ratios
# ----------
# ``sup_t |P_a(t) - P_b(t)| / (1 - t)`` controls how far apart two sectors'
# angular factors can be; it stays under the explicit sum bound.

for a, b in [(0, 1), (2, 5), (4, 9)]:
    print(f"gap ratio ({a},{b}) = {gap_ratio(a, b):.4f}  bound {gap_ratio_bound(a, b)}")

# %%
# Radial grids and the kinetic operator
# -------------------------------------
# ``K_l`` is the positive square root of the sector Schroedinger operator with
# mass ``m``.  Its spectrum starts at ``m`` and the lowest level approaches
# ``sqrt(m^2 + (pi/R)^2)`` for ``l = 0`` on a box of radius ``R``.

for scheme in ("uniform", "legendre-mapped"):
    grid = build_grid(96, 20.0, scheme)
    k0 = build_kinetic(0, 1.0, grid)
    ev = np.linalg.eigvalsh(k0.matrix)
    print(f"{scheme:16s} weight sum {grid.weights.sum():10.3f} (R^3/3 = {20.0**3 / 3:.3f}), "
          f"lowest K_0 level {ev[0]:.6f} vs {np.hypot(1.0, np.pi / 20.0):.6f}")

# %%
# Interaction kernels
# -------------------
# ``F_{l,l'}(r, r')`` is the angle-integrated two-body potential.  For the
# pure Newton term it is a sum of multipoles ``r_<^m / r_>^(m+1)``.  Every
# table obeys the explicit sup bound ``4 pi (1 + sup |r w|) / max(r, r')``.

grid = build_grid(48, 12.0, "legendre-mapped")
for pot in (PotentialSpec.newton(1.0, 0.0), PotentialSpec.gaussian(1.0, 0.0, c=0.8, sigma=0.7)):
    kt = build_kernel_table(2, grid, pot)
    for res in verify_kernel_bounds(kt, pot):
        print(f"{pot.name:9s} {res.line()}")
