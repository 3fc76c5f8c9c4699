"""Brute-force references on a small Cartesian grid.

States are lifted from the sector representation to dense kernels on an
``n^3`` grid (``n <= 12``).  Every observable is then recomputed there by
methods that share nothing with the sector formulas:

* traces and densities are plain Riemann sums (spectrally accurate for the
  smooth, well-localised test states used here);
* ``p``, ``|L|^2``, ``A`` and ``sqrt(-Delta + m^2)`` act through the FFT;
* two-body integrals use the eigen/singular decompositions of the lifted
  kernels.  The orbitals are carried to a refined grid by Nystrom extension,
  so that their products are not aliased, and are then convolved with the
  potential truncated at the box diameter.  The truncated Coulomb transform
  is known in closed form and the ``w`` transform comes from a
  one-dimensional quadrature.  Padding the grid makes this convolution free
  of periodic images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .legendre import gauss_legendre, legendre_all

__all__ = [
    "MAX_POINTS",
    "TensorGrid",
    "LiftedState",
    "Convolver",
    "rotation_matrix",
    "lift_kernel",
    "lift",
    "project_to_sectors",
    "gradient",
    "kinetic_form",
    "apply_angular",
    "apply_dilation",
    "brute_energy",
    "brute_trace_ops",
    "brute_direct_potential",
    "sector_test_functions",
    "exchange_elements",
    "g_alpha_elements",
    "random_small_state",
    "compare_observables",
]

#: largest number of tensor points for which dense kernels are formed
MAX_POINTS = 1728


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Cell-centred ``n^3`` grid on ``[-L, L]^3``; the origin is never a node for even ``n``."""

    n: int
    half_width: float

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("tensor grid needs n >= 2")
        if not self.half_width > 0:
            raise ValueError("half width must be positive")

    @property
    def h(self):
        return 2.0 * self.half_width / self.n

    @property
    def axis(self):
        return -self.half_width + (np.arange(self.n) + 0.5) * self.h

    @property
    def points(self):
        x = self.axis
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    @property
    def radii(self):
        return np.linalg.norm(self.points, axis=1)

    @property
    def volume(self):
        return self.h**3

    @property
    def shape(self):
        return (self.n,) * 3

    def refined(self, factor):
        return TensorGrid(self.n * factor, self.half_width)

    def wavenumbers(self):
        k = 2.0 * math.pi * np.fft.fftfreq(self.n, self.h)
        return np.meshgrid(k, k, k, indexing="ij")


def rotation_matrix(axis, angle):
    """Rodrigues rotation about ``axis`` by ``angle``."""
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx


# -- lifting -----------------------------------------------------------------


def lift_kernel(blocks, grid, X, Y):
    """Evaluate ``(1/4pi) sum_l (2l+1) k_l(|x|,|y|) P_l(cos)`` at point sets ``X``, ``Y``.

    ``blocks`` are stored sector matrices (unitary coordinates, ``4 pi`` times
    the angular kernel); the radial dependence uses the grid's interpolant.
    """
    X = np.atleast_2d(X)
    Y = np.atleast_2d(Y)
    rx = np.linalg.norm(X, axis=1)
    ry = np.linalg.norm(Y, axis=1)
    if np.any(rx == 0) or np.any(ry == 0):
        raise ValueError("lift points must avoid the origin")
    ex = grid.interpolation_matrix(rx)
    ey = grid.interpolation_matrix(ry)
    cos = np.clip((X / rx[:, None]) @ (Y / ry[:, None]).T, -1.0, 1.0)
    p = legendre_all(len(blocks) - 1, cos)
    out = np.zeros((len(X), len(Y)), dtype=complex)
    for ell, b in enumerate(blocks):
        if np.any(b):
            out += (2 * ell + 1) * (ex @ b @ ey.T) * p[ell]
    return out / (4.0 * math.pi)


def project_to_sectors(kernel_fn, grid, lmax, order=None):
    """Recover stored sector blocks from a rotation-invariant kernel function.

    ``kernel_fn(X, Y)`` returns kernel values for point arrays.  Uses
    ``k_l(r, r') = 1/2 int k(r e_z, r' e(t)) P_l(t) dt`` with a Gauss rule
    (exact when the kernel has no sectors above ``lmax``).
    """
    order = order or lmax + 2
    t, wt = gauss_legendre(order)
    r = grid.points
    p = legendre_all(lmax, t)
    n = grid.size
    blocks = [np.zeros((n, n), dtype=complex) for _ in range(lmax + 1)]
    X = np.stack([np.zeros(n), np.zeros(n), r], axis=1)
    for tq, wq, pq in zip(t, wt, p.T):
        Y = np.stack([r * math.sqrt(1 - tq * tq), np.zeros(n), r * tq], axis=1)
        k = kernel_fn(X, Y)
        for ell in range(lmax + 1):
            blocks[ell] += 0.5 * wq * pq[ell] * k
    return [4.0 * math.pi * grid.kernel_to_matrix(b) for b in blocks]


@dataclass(eq=False)
class LiftedState:
    """Dense kernels on a tensor grid and their decompositions.

    ``gamma`` and ``alpha`` hold kernel values (the operators are ``h^3``
    times these).  ``orbitals``/``occupations`` diagonalise ``gamma``; ``svd``
    is ``(u, s, v)`` with ``alpha(x, y) = sum_j s_j u_j(x) conj(v_j(y))``.
    Orbital columns are normalised in ``L^2`` on the grid.
    """

    tgrid: TensorGrid
    gamma: np.ndarray
    alpha: np.ndarray | None = None
    source: object = field(default=None, repr=False)
    orbitals: np.ndarray = field(init=False, repr=False)
    occupations: np.ndarray = field(init=False, repr=False)
    svd: tuple | None = field(init=False, repr=False, default=None)
    _fine: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        vol = self.tgrid.volume
        op = vol * 0.5 * (self.gamma + self.gamma.conj().T)
        ev, vec = np.linalg.eigh(op)
        keep = np.abs(ev) > 1e-13 * max(1.0, np.abs(ev).max())
        self.occupations = ev[keep]
        self.orbitals = vec[:, keep] / math.sqrt(vol)
        if self.alpha is not None and np.any(self.alpha):
            u, s, vh = np.linalg.svd(vol * self.alpha)
            keep = s > 1e-13 * max(1.0, s.max())
            self.svd = (u[:, keep] / math.sqrt(vol), s[keep], vh[keep].conj().T / math.sqrt(vol))

    def fine(self, factor, chunk=2000):
        """``(grid, orbitals, svd)`` on the refined grid by Nystrom extension.

        ``phi_j(x) = n_j^-1 sum_z h^3 gamma(x, z) phi_j(z)`` and likewise for
        the singular vectors of ``alpha``: only kernel evaluations and the
        coarse quadrature enter, so the refinement is as accurate as the
        coarse eigenproblem.
        """
        if factor not in self._fine:
            if self.source is None:
                raise ValueError("refinement needs the sector state the kernels were lifted from")
            st = self.source
            tg = self.tgrid.refined(factor)
            coarse = self.tgrid.points
            fine_pts = tg.points
            vol = self.tgrid.volume
            orb = np.empty((len(fine_pts), len(self.occupations)), dtype=complex)
            cg = self.orbitals * (vol / self.occupations)
            svd = None
            if self.svd is not None:
                u, s, v = self.svd
                uf = np.empty((len(fine_pts), len(s)), dtype=complex)
                vf = np.empty_like(uf)
            for a in range(0, len(fine_pts), chunk):
                blk = fine_pts[a: a + chunk]
                orb[a: a + chunk] = lift_kernel(st.g, st.grid, blk, coarse) @ cg
                if self.svd is not None:
                    uf[a: a + chunk] = lift_kernel(st.a, st.grid, blk, coarse) @ (v * (vol / s))
                    # conj(alpha(z, x)) summed against u_j(z)
                    vf[a: a + chunk] = lift_kernel(st.a, st.grid, coarse, blk).conj().T @ (u * (vol / s))
            if self.svd is not None:
                svd = (uf, s, vf)
            self._fine[factor] = (tg, orb, svd)
        return self._fine[factor]


def lift(state, tgrid):
    """Lift a sector state to dense kernels on ``tgrid``."""
    if tgrid.n**3 > MAX_POINTS:
        raise ValueError(f"tensor grid n={tgrid.n} exceeds the dense-kernel guard (n^3 <= {MAX_POINTS})")
    if tgrid.half_width * math.sqrt(3.0) >= state.grid.box_radius:
        raise ValueError("tensor box reaches beyond the radial box")
    pts = tgrid.points
    gamma = lift_kernel(state.g, state.grid, pts, pts)
    alpha = lift_kernel(state.a, state.grid, pts, pts) if state.is_hfb else None
    return LiftedState(tgrid, gamma, alpha, source=state)


# -- one-body operators through the FFT ---------------------------------------


def _fft_apply(f, multiplier, tgrid):
    extra = f.shape[1:]
    g = f.reshape(tgrid.shape + extra)
    mult = multiplier.reshape(multiplier.shape + (1,) * len(extra))
    out = np.fft.ifftn(mult * np.fft.fftn(g, axes=(0, 1, 2)), axes=(0, 1, 2))
    return out.reshape((-1,) + extra)


def _derivative_multipliers(tgrid):
    out = []
    for k in tgrid.wavenumbers():
        k = k.copy()
        if tgrid.n % 2 == 0:
            # the Nyquist mode has no odd partner
            k[np.isclose(np.abs(k), math.pi / tgrid.h)] = 0.0
        out.append(1j * k)
    return out


def gradient(f, tgrid):
    """Spectral gradient of grid functions (columns of ``f``)."""
    return [_fft_apply(f, d, tgrid) for d in _derivative_multipliers(tgrid)]


def _coordinates(f, tgrid):
    pts = tgrid.points
    return [pts[:, k].reshape((-1,) + (1,) * (f.ndim - 1)) for k in range(3)]


def kinetic_form(f, tgrid, mass, pad=4):
    """``<f_j, sqrt(-Delta + m^2) f_j>`` for each column ``f_j``.

    The symbol is not smooth at ``k = 0``.  On the bare periodic box,
    images of a function with non-zero mean therefore couple through the
    slowly decaying kernel.  Zero padding by ``pad`` refines the ``k``
    lattice and removes that error while keeping the resolved band.
    """
    n, h = tgrid.n, tgrid.h
    m = pad * n
    k1 = 2.0 * math.pi * np.fft.fftfreq(m, h)
    kx, ky, kz = np.meshgrid(k1, k1, k1, indexing="ij")
    symbol = np.sqrt(kx**2 + ky**2 + kz**2 + mass**2)
    cols = np.asarray(f).reshape(n**3, -1)
    out = np.empty(cols.shape[1])
    for j in range(cols.shape[1]):
        buf = np.zeros((m,) * 3, dtype=complex)
        buf[:n, :n, :n] = cols[:, j].reshape(n, n, n)
        fh = np.fft.fftn(buf)
        # Parseval on the padded lattice
        out[j] = float(np.sum(symbol * np.abs(fh) ** 2)) * h**3 / m**3
    return out


def apply_angular(f, tgrid):
    """``[L_x f, L_y f, L_z f]`` with ``L = -i x cross grad``."""
    x, y, z = _coordinates(f, tgrid)
    dx, dy, dz = gradient(f, tgrid)
    return [-1j * (y * dz - z * dy), -1j * (z * dx - x * dz), -1j * (x * dy - y * dx)]


def apply_dilation(f, tgrid):
    """``A f = -i (x . grad f + div(x f))``."""
    coords = _coordinates(f, tgrid)
    grad = gradient(f, tgrid)
    out = sum(c * g for c, g in zip(coords, grad))
    for c, d in zip(coords, _derivative_multipliers(tgrid)):
        out = out + _fft_apply(c * f, d, tgrid)
    return -1j * out


# -- two-body convolution -----------------------------------------------------


class Convolver:
    """``(V * f)(x) = int V(|x - y|) f(y) dy`` for ``f`` supported in the box.

    ``V = -newton_weight / r + w_short(r)`` truncated at the box diameter
    ``D``.  The continuous transform of the truncated kernel is used on a
    grid padded so that ``m h >= 2 L + D``.  The circular convolution then
    equals the free-space one for every pair of box points.
    """

    def __init__(self, tgrid, potential, w_points=4000):
        self.tgrid = tgrid
        h = tgrid.h
        diam = 2.0 * math.sqrt(3.0) * tgrid.half_width
        m = int(math.ceil((2.0 * tgrid.half_width + diam) / h)) + 1
        m += m % 2
        self.m = m
        k1 = 2.0 * math.pi * np.fft.fftfreq(m, h)
        kx, ky, kz = np.meshgrid(k1, k1, k1, indexing="ij")
        k = np.sqrt(kx**2 + ky**2 + kz**2)
        kernel = np.empty_like(k)
        nz = k > 0
        c = potential.newton_weight
        kernel[nz] = -c * 4.0 * math.pi * (1.0 - np.cos(k[nz] * diam)) / k[nz] ** 2
        kernel[~nz] = -c * 2.0 * math.pi * diam**2
        if potential.has_short_part:
            kernel += self._short_transform(k, potential, diam, w_points)
        self.kernel = kernel

    @staticmethod
    def _short_transform(k, potential, diam, npts):
        """``4 pi / k int_0^D w(r) r sin(k r) dr`` (``4 pi int w r^2`` at ``k = 0``)."""
        upper = min(diam, potential.w_range)
        x, wq = gauss_legendre(npts)
        r = 0.5 * upper * (x + 1.0)
        wr = 0.5 * upper * wq * potential.w_short(r) * r
        uniq, inv = np.unique(np.round(k.ravel(), 12), return_inverse=True)
        vals = np.empty_like(uniq)
        chunk = 256
        for s in range(0, len(uniq), chunk):
            kk = uniq[s: s + chunk]
            safe = np.where(kk > 0, kk, 1.0)
            sinc = np.where(kk[:, None] > 0, np.sin(np.outer(kk, r)) / safe[:, None], r[None, :])
            vals[s: s + chunk] = 4.0 * math.pi * (sinc * wr[None, :]).sum(axis=1)
        return vals[inv].reshape(k.shape)

    def __call__(self, f):
        n = self.tgrid.n
        f = np.asarray(f)
        cols = f.reshape(n**3, -1)
        out = np.empty(cols.shape, dtype=complex)
        for j in range(cols.shape[1]):
            buf = np.zeros((self.m,) * 3, dtype=complex)
            buf[:n, :n, :n] = cols[:, j].reshape(n, n, n)
            conv = np.fft.ifftn(self.kernel * np.fft.fftn(buf))
            out[:, j] = conv[:n, :n, :n].ravel()
        # the inverse transform of the continuous spectrum samples h^3 V,
        # so this is already the quadrature of the integral
        return out.reshape(f.shape)


# -- observables ---------------------------------------------------------------


def brute_energy(lifted, potential, refine=2, conv=None):
    """Energy parts by direct quadrature: kinetic, direct, exchange, pairing."""
    kappa = potential.kappa
    kin = float(np.sum(lifted.occupations * kinetic_form(lifted.orbitals, lifted.tgrid, potential.mass)))
    tg, phi, svd = lifted.fine(refine)
    occ = lifted.occupations
    vol = tg.volume
    conv = conv or Convolver(tg, potential)
    rho = np.abs(phi) ** 2 @ occ
    direct = 0.5 * kappa * float(np.real(np.sum(rho * conv(rho)))) * vol
    # |gamma(x,y)|^2 = sum_jk n_j n_k P_jk(x) conj(P_jk(y)), P_jk = phi_j conj(phi_k)
    exchange = 0.0
    for j in range(phi.shape[1]):
        pair = phi[:, j][:, None] * phi.conj()
        vp = conv(pair)
        exchange += float(np.real(np.sum(occ[j] * occ * np.sum(pair.conj() * vp, axis=0)))) * vol
    exchange *= -0.5 * kappa
    pairing = 0.0
    if svd is not None:
        u, s, v = svd
        # |alpha(x,y)|^2 = sum_jk s_j s_k [u_j conj(u_k)](x) [conj(v_j) v_k](y)
        for j in range(len(s)):
            fx = u[:, j][:, None] * u.conj()
            fy = v[:, j].conj()[:, None] * v
            pairing += float(np.real(np.sum(s[j] * s * np.sum(fx * conv(fy), axis=0)))) * vol
        pairing *= 0.5 * kappa
    return {"kinetic": kin, "direct": direct, "exchange": exchange, "pairing": pairing}


def brute_trace_ops(lifted, which, mass=0.0):
    """One-body observables of a lifted state by direct quadrature.

    ``which`` is one of ``"trace"``, ``"rho"``, ``"L2"``, ``"M"``, ``"A"``.
    """
    tg = lifted.tgrid
    vol = tg.volume
    phi, occ = lifted.orbitals, lifted.occupations
    if which == "trace":
        return float(np.real(np.trace(lifted.gamma)) * vol)
    if which == "rho":
        return np.real(np.diag(lifted.gamma))
    if which == "L2":
        comps = apply_angular(phi, tg)
        return float(sum(np.sum(occ * np.sum(np.abs(c) ** 2, axis=0)) for c in comps) * vol)
    if which == "M":
        total = 0.0
        for c in _coordinates(phi, tg):
            total += np.sum(occ * kinetic_form(c * phi, tg, mass))
        return float(total)
    if which == "A":
        af = apply_dilation(phi, tg)
        return float(np.real(np.sum(occ * np.sum(phi.conj() * af, axis=0))) * vol)
    raise ValueError(f"unknown observable {which!r}")


def brute_direct_potential(lifted, potential, refine=2, conv=None):
    """``(points, V * rho)`` on the refined grid."""
    tg, phi, _ = lifted.fine(refine)
    conv = conv or Convolver(tg, potential)
    rho = np.abs(phi) ** 2 @ lifted.occupations
    return tg.points, np.real(conv(rho))


def sector_test_functions(grid, tgrid, tests):
    """Columns ``f(r) Y_{l0}`` on ``tgrid`` for ``tests = [(ell, f_values_on_radial_grid), ...]``.

    The radial part is evaluated with the grid interpolant, so the same
    function can be paired with the sector blocks.
    """
    pts = tgrid.points
    r = np.linalg.norm(pts, axis=1)
    E = grid.interpolation_matrix(r)
    cols = []
    for ell, f in tests:
        y = math.sqrt((2 * ell + 1) / (4 * math.pi)) * legendre_all(ell, pts[:, 2] / r)[ell]
        cols.append((E @ grid.to_unitary(f)) * y)
    return np.stack(cols, axis=1)


def exchange_elements(lifted, potential, grid, tests, refine=2, conv=None):
    """``<psi_a, R_gamma psi_b>`` with ``R_gamma(x, y) = V(x - y) gamma(x, y)``.

    ``tests`` as in :func:`sector_test_functions`.
    """
    tg, phi, _ = lifted.fine(refine)
    vol = tg.volume
    conv = conv or Convolver(tg, potential)
    psi = sector_test_functions(grid, tg, tests)
    out = np.zeros((psi.shape[1],) * 2, dtype=complex)
    for j, n_j in enumerate(lifted.occupations):
        vr = conv(phi[:, j].conj()[:, None] * psi)           # V * (conj(phi_j) psi_b)
        left = psi.conj() * phi[:, j][:, None]                # conj(psi_a) phi_j
        out += n_j * (left.T @ vr) * vol
    return out


def g_alpha_elements(lifted, potential, grid, tests, refine=2, conv=None):
    """``<psi_a, G psi_b>`` for the kernel
    ``G(x, y) = i kappa int alpha(x,z) conj(alpha(y,z)) (V(y-z) - V(x-z)) dz``.
    """
    tg, _, svd = lifted.fine(refine)
    vol = tg.volume
    psi = sector_test_functions(grid, tg, tests)
    k = psi.shape[1]
    out = np.zeros((k, k), dtype=complex)
    if svd is None:
        return out
    conv = conv or Convolver(tg, potential)
    u, s, v = svd
    # alpha(x,z) = sum_j s_j u_j(x) conj(v_j(z))
    proj = (psi.conj().T @ u) * vol                        # [a, j] = int conj(psi_a) u_j
    vx = [conv(psi.conj() * u[:, j][:, None]) for j in range(len(s))]   # (z, a)
    for i in range(len(s)):
        vy = conv(u[:, i].conj()[:, None] * psi)           # (z, b): int V(y-z) conj(u_i(y)) psi_b(y)
        proj_b = (u[:, i].conj() @ psi) * vol              # (b,)
        for j in range(len(s)):
            w = v[:, j].conj() * v[:, i]
            t1 = (w @ vy) * vol                            # (b,)
            t2 = (w @ vx[j]) * vol                         # (a,)
            out += s[j] * s[i] * (np.outer(proj[:, j], t1) - np.outer(t2, proj_b))
    return 1j * potential.kappa * out


# -- random test states -------------------------------------------------------


def random_small_state(grid, lmax, rng, sigma=1.0, hfb=True, chirp=0.1, width_spread=0.1,
                       paired=(0,)):
    """Random smooth test state built from Gaussian-harmonic orbitals.

    Every sector ``l`` carries the orbital ``r^l exp(-r^2 / (2 s^2) + i c r^2)``
    with ``s`` drawn from ``[(1 - width_spread) sigma, sigma]`` and ``c`` from
    ``[chirp / 2, chirp]`` (one sign, so ``Tr A gamma`` stays away from zero).
    Sectors in ``paired`` add the partner with ``r^(l+2)``; there the state is
    ``n P`` on the two-dimensional span, plus for ``hfb`` the pairing block
    ``t (u v^T - v u^T)`` with ``t^2 <= n (1 - n)``.  Other sectors hold the
    single orbital with occupation ``n``.  Occupations are drawn from
    ``[0.2, 0.9]``.  ``0 <= Gamma <= 1`` holds exactly.

    The single-orbital choice keeps the band content low enough for an
    ``n = 10`` Cartesian grid to resolve the state.
    """
    from .state import HFBState, HFState

    r = grid.points
    gs, as_ = [], []
    for ell in range(lmax + 1):
        s = sigma * rng.uniform(1.0 - width_spread, 1.0)
        c = rng.uniform(0.5, 1.0) * chirp
        env = np.exp(-r * r / (2 * s * s) + 1j * c * r * r)
        cols = [grid.to_unitary(r**ell * env)]
        if ell in paired:
            cols.append(grid.to_unitary(r ** (ell + 2) * env))
        q, _ = np.linalg.qr(np.stack(cols, axis=1))
        n = rng.uniform(0.2, 0.9)
        gs.append(n * q @ q.conj().T)
        a = np.zeros_like(gs[-1])
        if hfb and ell in paired:
            t = rng.uniform(0.3, 1.0) * math.sqrt(n * (1 - n))
            u, v = q[:, 0], q[:, 1]
            a = t * (np.outer(u, v) - np.outer(v, u))
        as_.append(a)
    return HFBState(grid, gs, as_) if hfb else HFState(grid, gs)


# -- whole-state comparison ---------------------------------------------------


def _default_tests(grid, lmax):
    r = grid.points
    return [(ell, r ** (ell + p) * np.exp(-r * r / (2 * s * s)))
            for ell in range(lmax + 1) for p, s in ((0, 1.0), (2, 0.9))]


def _sector_matrix(grid, blocks, tests):
    k = len(tests)
    out = np.zeros((k, k), dtype=complex)
    for a, (la, fa) in enumerate(tests):
        for b, (lb, fb) in enumerate(tests):
            if la == lb:
                out[a, b] = grid.to_unitary(fa).conj() @ blocks[la] @ grid.to_unitary(fb)
    return out


def compare_observables(state, model, tgrid, refine=2):
    """Relative deviation of every sector observable from its brute-force value.

    Scalars are compared as ``|sector - brute| / |brute|``; the density and
    the direct potential use the max-norm over the tensor points, and the
    exchange operator and ``G_alpha`` use the Frobenius norm of their matrices
    on smooth sector test functions (``r^(l+p) exp(-r^2/2s^2)``, ``p`` even,
    so they are smooth in three dimensions).
    """
    from .diagnostics import virial_A, virial_M
    from .kernels import direct_potential_at
    from .meanfield import exchange_block, g_alpha_term
    from .state import angular_moment, density, energy_parts, particle_number

    grid, pot = state.grid, model.potential
    lf = lift(state, tgrid)

    def rel(sector, brute):
        return float(abs(sector - brute) / max(abs(brute), 1e-300))

    out = {
        "trace": rel(particle_number(state), brute_trace_ops(lf, "trace")),
        "L2": rel(angular_moment(state, 2.0), brute_trace_ops(lf, "L2")),
        "M": rel(virial_M(state, model.kinetics), brute_trace_ops(lf, "M", mass=pot.mass)),
        "A": rel(virial_A(state, model.dilation), brute_trace_ops(lf, "A")),
    }
    rho = density(state)
    rho_i = (grid.interpolation_matrix(tgrid.radii) @ grid.to_unitary(rho)).real
    out["rho"] = float(np.max(np.abs(brute_trace_ops(lf, "rho") - rho_i)) / np.max(np.abs(rho_i)))
    conv = Convolver(tgrid.refined(refine), pot)
    pts, v_brute = brute_direct_potential(lf, pot, refine, conv)
    v_sector = direct_potential_at(np.linalg.norm(pts, axis=1), rho, grid, pot, model.gaunt)
    out["V_rho"] = float(np.max(np.abs(v_brute - v_sector)) / np.max(np.abs(v_sector)))
    brute = brute_energy(lf, pot, refine, conv)
    sector = energy_parts(state, model.table, model.kinetics)
    for key, val in brute.items():
        if key == "pairing" and not state.is_hfb:
            continue
        out[f"energy_{key}"] = rel(sector[key], val)
    tests = _default_tests(grid, state.lmax)
    xo = exchange_elements(lf, pot, grid, tests, refine, conv)
    xs = _sector_matrix(grid, [exchange_block(ell, state, model.table)
                               for ell in range(state.lmax + 1)], tests)
    out["R_gamma"] = float(np.linalg.norm(xo - xs) / np.linalg.norm(xo))
    if state.is_hfb and any(np.any(a) for a in state.a):
        go = g_alpha_elements(lf, pot, grid, tests, refine, conv)
        gs = _sector_matrix(grid, g_alpha_term(state, model.table), tests)
        out["G_alpha"] = float(np.linalg.norm(go - gs) / np.linalg.norm(go))
    return out
