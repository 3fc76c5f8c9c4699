"""Two-body interaction kernels reduced to angular-momentum sectors.

The pair potential is ``V(r) = -1/r + w(r)``.  Integrating it against two
Legendre polynomials gives the sector kernels

    F[l, l'](r, r') = 2 pi int_{-1}^{1} P_l(t) P_l'(t) V(sqrt(r^2 + r'^2 - 2 r r' t)) dt,

which drive every direct, exchange and pairing term.  The Coulomb part is
summed exactly from its multipole expansion (finitely many terms survive the
Gaunt selection rules); the remainder of ``w`` is integrated numerically
after the substitution ``s = |x - y|``, which removes the square-root
endpoint singularity of the ``t`` integrand.

A ``w`` that itself carries a ``c / r`` tail (the screened preset) is split as
``c / r + w_short`` so the long-range piece is also handled exactly.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .checks import CheckResult
from .legendre import GauntTable, gauss_legendre, legendre_all

__all__ = [
    "PotentialSpec",
    "KernelTable",
    "QuadratureError",
    "newton_kernel",
    "sector_kernels",
    "short_range_kernels",
    "build_kernel_table",
    "direct_potential",
    "direct_potential_at",
    "verify_kernel_bounds",
    "PRESETS",
]

# Dense sampling window used to certify sup-functionals of presets.
_SUP_GRID = np.concatenate([np.linspace(0.0, 50.0, 200_001), np.geomspace(50.0, 1e4, 20_001)])


class QuadratureError(RuntimeError):
    """Order doubling changed a kernel entry by more than the tolerance."""


def _zero(r):
    return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Coupling, mass and the perturbation ``w`` of the Newton potential.

    The perturbation is stored as ``w(r) = coulomb_tail / r + w_short(r)``;
    ``w_short`` must be bounded near the origin and is the only part that is
    integrated numerically.  ``length_scale`` sets the quadrature panel size
    and ``w_range`` the distance beyond which ``w_short`` is treated as zero.

    ``sup_rw``, ``sup_wprime`` (with its exponent ``epsilon``) and
    ``sup_neg`` are ``sup r|w|``, ``sup (1+r^2)^(1+eps)|w'|`` and
    ``sup |w + r w'|_-`` respectively.
    """

    kappa: float
    mass: float
    name: str = "newton"
    params: dict = field(default_factory=dict)
    coulomb_tail: float = 0.0
    w_short: Callable = _zero
    w_short_prime: Callable = _zero
    sup_rw: float = 0.0
    sup_wprime: float = 0.0
    sup_neg: float = 0.0
    epsilon: float = 0.5
    length_scale: float = 1.0
    w_range: float = math.inf
    sample_knots: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("coupling kappa must be nonnegative")
        if not self.mass >= 0:
            raise ValueError("mass must be nonnegative")
        if self.sup_neg < 0 or self.sup_rw < 0 or self.sup_wprime < 0:
            raise ValueError("sup-functionals are nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @property
    def newton_weight(self):
        """Coefficient of ``-1/r`` in ``V`` after absorbing the ``w`` tail."""
        return 1.0 - self.coulomb_tail

    @property
    def has_short_part(self):
        return self.w_short is not _zero

    @property
    def is_newton(self):
        return self.coulomb_tail == 0.0 and not self.has_short_part

    @property
    def decay_assumption_holds(self):
        """Whether both sup-norms entering the well-posedness assumption are finite."""
        return math.isfinite(self.sup_rw) and math.isfinite(self.sup_wprime)

    def w(self, r):
        r = np.asarray(r, dtype=float)
        if self.coulomb_tail == 0.0:
            return self.w_short(r)
        return self.coulomb_tail / r + self.w_short(r)

    def w_prime(self, r):
        r = np.asarray(r, dtype=float)
        if self.coulomb_tail == 0.0:
            return self.w_short_prime(r)
        return -self.coulomb_tail / r**2 + self.w_short_prime(r)

    def V(self, r):
        r = np.asarray(r, dtype=float)
        return -self.newton_weight / r + self.w_short(r)

    def with_kappa(self, kappa):
        return dataclasses.replace(self, kappa=float(kappa))

    def to_json(self):
        return {
            "name": self.name,
            "params": dict(self.params),
            "kappa": self.kappa,
            "mass": self.mass,
            "epsilon": self.epsilon,
            "sup_rw": _finite_or_str(self.sup_rw),
            "sup_wprime": _finite_or_str(self.sup_wprime),
            "sup_neg": self.sup_neg,
            "decay_assumption_holds": self.decay_assumption_holds,
        }

    # -- presets ---------------------------------------------------------

    @classmethod
    def newton(cls, kappa, mass, epsilon=0.5):
        """Pure Newton attraction, ``w = 0``."""
        return cls(kappa, mass, "newton", {}, epsilon=epsilon)

    @classmethod
    def gaussian(cls, kappa, mass, c, sigma, epsilon=0.5):
        """``w(r) = c exp(-r^2 / sigma^2)``."""
        if not sigma > 0:
            raise ValueError("gaussian width must be positive")

        def w(r):
            return c * np.exp(-(np.asarray(r) / sigma) ** 2)

        def wp(r):
            r = np.asarray(r)
            return -2.0 * c * r / sigma**2 * np.exp(-((r / sigma) ** 2))

        # r e^{-r^2/s^2} peaks at r = s/sqrt(2); (1 - 2x) e^{-x} (x = r^2/s^2)
        # has minimum -2 e^{-3/2} at x = 3/2 and maximum 1 at x = 0.
        sup_rw = abs(c) * sigma / math.sqrt(2.0) * math.exp(-0.5)
        sup_neg = 2.0 * c * math.exp(-1.5) if c > 0 else abs(c)
        r = _SUP_GRID
        sup_wp = float(np.max((1 + r**2) ** (1 + epsilon) * np.abs(wp(r))))
        return cls(
            kappa, mass, "gaussian", {"c": c, "sigma": sigma},
            0.0, w, wp, sup_rw, sup_wp, sup_neg, epsilon,
            length_scale=sigma, w_range=7.0 * sigma,
        )

    @classmethod
    def yukawa_screened(cls, kappa, mass, c, lam, epsilon=0.5):
        """``w(r) = c (1 - exp(-lam r)) / r``.

        ``r w = c (1 - e^{-lam r})`` gives ``sup_rw = |c|`` and
        ``w + r w' = (r w)' = c lam e^{-lam r}`` gives ``sup_neg = lam max(0, -c)``.
        ``w'`` decays only like ``1/r^2``, so ``sup_wprime`` is infinite and
        the preset is flagged through :attr:`decay_assumption_holds`.
        """
        if not lam > 0:
            raise ValueError("screening rate must be positive")

        def w_short(r):
            r = np.asarray(r, dtype=float)
            return -c * np.exp(-lam * r) / r

        def w_short_prime(r):
            r = np.asarray(r, dtype=float)
            return c * np.exp(-lam * r) * (lam * r + 1.0) / r**2

        return cls(
            kappa, mass, "yukawa-screened", {"c": c, "lambda": lam},
            c, w_short, w_short_prime, abs(c), math.inf, lam * max(0.0, -c), epsilon,
            length_scale=1.0 / lam, w_range=40.0 / lam,
        )

    @classmethod
    def sampled(cls, kappa, mass, r, w, sup_rw, sup_wprime, sup_neg, w_prime=None, epsilon=0.5):
        """Perturbation given by samples, linearly interpolated, zero beyond the last sample.

        The sup-functionals are user inputs; they are checked against the
        samples and rejected if the samples exceed them.
        """
        r = np.asarray(r, dtype=float)
        w = np.asarray(w, dtype=float)
        if r.ndim != 1 or r.shape != w.shape or len(r) < 2 or np.any(np.diff(r) <= 0) or r[0] < 0:
            raise ValueError("samples need strictly increasing r >= 0 and matching w")
        wp = np.gradient(w, r) if w_prime is None else np.asarray(w_prime, dtype=float)
        slack = 1e-9
        measured = {
            "sup_rw": float(np.max(np.abs(r * w))),
            "sup_wprime": float(np.max((1 + r**2) ** (1 + epsilon) * np.abs(wp))),
            "sup_neg": float(np.max(np.maximum(-(w + r * wp), 0.0))),
        }
        given = {"sup_rw": sup_rw, "sup_wprime": sup_wprime, "sup_neg": sup_neg}
        for key, val in measured.items():
            if val > given[key] * (1 + slack) + slack:
                raise ValueError(f"{key} = {given[key]} understates the sampled value {val:.6g}")

        def w_fn(x):
            return np.interp(x, r, w, right=0.0)

        def wp_fn(x):
            return np.interp(x, r, wp, right=0.0)

        return cls(
            kappa, mass, "sampled", {"n_samples": len(r)},
            0.0, w_fn, wp_fn, float(sup_rw), float(sup_wprime), float(sup_neg), epsilon,
            length_scale=float(np.min(np.diff(r))), w_range=float(r[-1]), sample_knots=r,
        )

    @classmethod
    def from_preset(cls, name, kappa, mass, epsilon=0.5, **params):
        if name not in PRESETS:
            raise ValueError(f"unknown potential preset {name!r}; expected one of {sorted(PRESETS)}")
        return PRESETS[name](kappa, mass, epsilon=epsilon, **params)


PRESETS = {
    "newton": PotentialSpec.newton,
    "gaussian": PotentialSpec.gaussian,
    "yukawa-screened": PotentialSpec.yukawa_screened,
}


def _finite_or_str(x):
    return x if math.isfinite(x) else "inf"


def newton_kernel(ell, ellp, r, rp, gaunt):
    """Exact Coulomb part ``-2 pi sum_m G(l,l',m) min^m / max^(m+1)``.

    Vectorised over broadcastable ``r`` and ``rp``.
    """
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    if np.any((r <= 0) & (rp <= 0)):
        raise ValueError("newton_kernel needs max(r, r') > 0")
    lo = np.minimum(r, rp)
    hi = np.maximum(r, rp)
    ratio = lo / hi
    out = np.zeros(np.broadcast(r, rp).shape)
    for m in range(abs(ell - ellp), ell + ellp + 1):
        g = gaunt(ell, ellp, m)
        if g != 0.0:
            out += g * ratio**m
    return -2.0 * math.pi * out / hi


def _pair_integrals(potential, pairs, s, ws, r, rp):
    """Quadrature sums of ``2 pi P_l P_l' w_short(s) s / (r r')`` for each pair."""
    t = np.clip((r[:, None] ** 2 + rp[:, None] ** 2 - s**2) / (2.0 * r[:, None] * rp[:, None]), -1.0, 1.0)
    base = 2.0 * math.pi * ws * potential.w_short(s) * s / (r * rp)[:, None]
    p = legendre_all(max(max(pr) for pr in pairs), t)
    vals = np.empty((len(pairs), len(r)))
    absv = np.empty_like(vals)
    for k, (l1, l2) in enumerate(pairs):
        integrand = p[l1] * p[l2] * base
        vals[k] = integrand.sum(axis=1)
        absv[k] = np.abs(integrand).sum(axis=1)
    return vals, absv


def _short_range_panels(potential, pairs, r, rp, order):
    """Equal panels in ``s = |x - y|`` over ``[|r - r'|, min(r + r', range)]``."""
    a = np.abs(r - rp)
    b = np.minimum(r + rp, potential.w_range)
    live = b > a
    vals = np.zeros((len(pairs), len(r)))
    absv = np.zeros_like(vals)
    if not np.any(live):
        return vals, absv
    a_l, b_l = a[live], b[live]
    n_panels = int(np.clip(np.ceil(np.max(b_l - a_l) / potential.length_scale), 1, 256))
    x, wq = gauss_legendre(order)
    u = (np.arange(n_panels)[:, None] + 0.5 * (x[None, :] + 1.0)).ravel() / n_panels
    wu = np.tile(0.5 * wq, n_panels) / n_panels
    length = b_l - a_l
    s = a_l[:, None] + length[:, None] * u[None, :]
    ws = length[:, None] * wu[None, :]
    vals[:, live], absv[:, live] = _pair_integrals(potential, pairs, s, ws, r[live], rp[live])
    return vals, absv


def _short_range_knots(potential, pairs, r, rp, order):
    """Variant for sampled ``w``: panel breaks at the sample knots."""
    x, wq = gauss_legendre(order)
    knots = potential.sample_knots
    vals = np.zeros((len(pairs), len(r)))
    absv = np.zeros_like(vals)
    for k, (ri, rj) in enumerate(zip(r, rp)):
        a, b = abs(ri - rj), min(ri + rj, potential.w_range)
        if b <= a:
            continue
        edges = np.concatenate([[a], knots[(knots > a) & (knots < b)], [b]])
        lo, hi = edges[:-1], edges[1:]
        s = (0.5 * (hi - lo)[:, None] * (x[None, :] + 1.0) + lo[:, None]).ravel()
        ws = (0.5 * (hi - lo)[:, None] * wq[None, :]).ravel()
        v, av = _pair_integrals(potential, pairs, s[None, :], ws[None, :], np.array([ri]), np.array([rj]))
        vals[:, k], absv[:, k] = v[:, 0], av[:, 0]
    return vals, absv


def short_range_kernels(potential, pairs, r, rp, tol=1e-8):
    """Certified ``2 pi int P_l P_l' w_short dt`` for each ``(l, l')`` in ``pairs``.

    Returns an array ``(len(pairs), len(r))``.  Raises
    :class:`QuadratureError` if doubling the Gauss order changes an entry by
    more than ``tol`` relative to the integral of the absolute integrand.
    """
    r = np.asarray(r, dtype=float).ravel()
    rp = np.asarray(rp, dtype=float).ravel()
    pairs = list(pairs)
    if not potential.has_short_part:
        return np.zeros((len(pairs), len(r)))
    order = max(16, 2 * max(a + b for a, b in pairs) + 8)
    routine = _short_range_knots if potential.sample_knots is not None else _short_range_panels
    coarse, _ = routine(potential, pairs, r, rp, order)
    fine, absv = routine(potential, pairs, r, rp, 2 * order)
    err = np.abs(fine - coarse) / np.maximum(absv, 1e-300)
    bad = err > tol
    if np.any(bad):
        k, q = np.argwhere(bad)[0]
        raise QuadratureError(
            f"kernel quadrature did not converge: sector {pairs[k]}, "
            f"r={r[q]:.4g}, r'={rp[q]:.4g}, relative change {err[k, q]:.2e}"
        )
    return fine


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Sector kernels on a radial grid.

    ``F[l, l']`` holds ``F_{l,l'}(r_i, r_j)`` for ``l, l' <= lmax`` and
    ``multipoles[m]`` holds ``F_{m,0}(r_i, r_j)`` for ``m <= 2 lmax``; the
    latter generate the former through
    ``F_{l,l'} = sum_m (2m+1)/2 G(l,l',m) F_{m,0}``.
    """

    lmax: int
    grid: object
    potential: PotentialSpec
    gaunt: GauntTable
    F: np.ndarray = field(repr=False)
    multipoles: np.ndarray = field(repr=False)

    def pair(self, ell, ellp):
        if max(ell, ellp) > self.lmax:
            raise IndexError(f"kernel table covers sectors up to {self.lmax}")
        return self.F[ell, ellp]


def sector_kernels(pairs, grid, potential, gaunt):
    """``F_{l,l'}(r_i, r_j)`` on the grid for each pair; shape ``(len(pairs), N, N)``."""
    r = grid.points
    n = len(r)
    iu, ju = np.triu_indices(n)
    newton = np.stack([newton_kernel(l1, l2, r[iu], r[ju], gaunt) for l1, l2 in pairs])
    total = potential.newton_weight * newton + short_range_kernels(potential, pairs, r[iu], r[ju])
    out = np.empty((len(pairs), n, n))
    out[:, iu, ju] = total
    out[:, ju, iu] = total
    return out


def build_kernel_table(lmax, grid, potential, gaunt=None):
    """Assemble :class:`KernelTable` for sectors ``0..lmax``.

    The Gaunt table must reach degree ``2 lmax`` (all multipoles that couple
    two represented sectors).
    """
    if int(lmax) != lmax or lmax < 0:
        raise ValueError("cutoff must be a nonnegative integer")
    lmax = int(lmax)
    if gaunt is None:
        gaunt = GauntTable.build(2 * lmax)
    if gaunt.max_degree < 2 * lmax:
        raise ValueError(f"Gaunt table degree {gaunt.max_degree} < 2*lmax = {2 * lmax}")
    sector_pairs = [(a, b) for a in range(lmax + 1) for b in range(a, lmax + 1)]
    multipole_pairs = [(m, 0) for m in range(lmax + 1, 2 * lmax + 1)]
    vals = sector_kernels(sector_pairs + multipole_pairs, grid, potential, gaunt)
    n = grid.size
    F = np.empty((lmax + 1, lmax + 1, n, n))
    for k, (a, b) in enumerate(sector_pairs):
        F[a, b] = vals[k]
        F[b, a] = vals[k]
    multipoles = np.concatenate([F[:, 0], vals[len(sector_pairs):]], axis=0)
    F.setflags(write=False)
    multipoles.setflags(write=False)
    return KernelTable(lmax, grid, potential, gaunt, F, multipoles)


def direct_potential(rho, grid, table):
    """``(V * rho)(r_i) = sum_j w_j F_{0,0}(r_i, r_j) rho(r_j)``.

    ``rho`` is the (spherically symmetric) density sampled on the grid; the
    angular integral is already inside ``F_{0,0}``.
    """
    rho = np.asarray(rho)
    return table.F[0, 0] @ (grid.weights * rho)


def direct_potential_at(radii, rho, grid, potential, gaunt, chunk=64):
    """``(V * rho)(r)`` at arbitrary radii for a grid-sampled radial density."""
    radii = np.asarray(radii, dtype=float).ravel()
    src = grid.weights * np.asarray(rho)
    out = np.empty(len(radii), dtype=np.result_type(src, float))
    for a in range(0, len(radii), chunk):
        rb = radii[a: a + chunk]
        rr = np.repeat(rb, grid.size)
        rp = np.tile(grid.points, len(rb))
        f00 = potential.newton_weight * newton_kernel(0, 0, rr, rp, gaunt)
        f00 = f00 + short_range_kernels(potential, [(0, 0)], rr, rp)[0]
        out[a: a + chunk] = f00.reshape(len(rb), grid.size) @ src
    return out


def _fd_radial_derivative(values, r):
    """Centered differences along the first radial axis (one-sided at the ends)."""
    return np.gradient(values, r, axis=-2)


def verify_kernel_bounds(table, potential=None, rel_tol=1e-12):
    """Certify ``|F| <= 4 pi (1 + sup_rw) / max(r, r')`` and fit the derivative bound.

    The derivative bound ``|r^2 d_r F_{l,l'}| <= C (1 + l^2 + l'^2) + C_eps S``
    (``S = sup (1+r^2)^(1+eps)|w'|``) has no explicit constants; ``C`` is fitted
    from the Coulomb part and ``C_eps`` from the remainder so that refinement
    studies can compare them.

    Returns a list of :class:`CheckResult`; the first is the hard bound.
    """
    potential = potential or table.potential
    r = table.grid.points
    hi = np.maximum(r[:, None], r[None, :])
    bound = 4.0 * math.pi * (1.0 + potential.sup_rw) / hi
    ratio = np.abs(table.F) / bound
    worst = float(ratio.max())
    hard = CheckResult(
        "kernel sup bound 4pi(1+sup|rw|)/max(r,r')",
        passed=worst <= 1.0 + rel_tol,
        margin=1.0 - worst,
        tolerance=rel_tol,
        samples=int(ratio.size),
        details={"max_ratio": worst, "lmax": table.lmax, "grid": table.grid.spec()},
    )

    ell = np.arange(table.lmax + 1)
    shape = 1.0 + ell[:, None] ** 2 + ell[None, :] ** 2
    n = len(r)
    iu, ju = np.triu_indices(n)
    newton = np.empty((table.lmax + 1, table.lmax + 1, n, n))
    for l1 in range(table.lmax + 1):
        for l2 in range(table.lmax + 1):
            newton[l1, l2] = newton_kernel(l1, l2, r[:, None], r[None, :], table.gaunt)
    newton *= potential.newton_weight
    d_newton = r[:, None] ** 2 * _fd_radial_derivative(newton, r)
    c_fit = float(np.max(np.abs(d_newton).max(axis=(2, 3)) / shape))
    rest = table.F - newton
    d_rest = r[:, None] ** 2 * _fd_radial_derivative(rest, r)
    rest_max = float(np.abs(d_rest).max())
    if potential.is_newton or rest_max == 0.0:
        c_eps = 0.0
    elif math.isfinite(potential.sup_wprime) and potential.sup_wprime > 0:
        c_eps = rest_max / potential.sup_wprime
    else:
        c_eps = math.inf
    fitted = CheckResult(
        "kernel derivative bound (fitted constants)",
        passed=math.isfinite(c_fit),
        margin=math.nan,
        tolerance=math.nan,
        samples=int(d_newton.size),
        details={"C": c_fit, "C_eps": c_eps, "sup_wprime": _finite_or_str(potential.sup_wprime)},
    )
    return [hard, fitted]
