"""Legendre polynomials, Gaunt triple integrals and Gauss-Legendre rules.

Everything here is the angular bookkeeping for spherically symmetric
kernels: a two-body kernel that depends on ``omega_x . omega_y`` only is
expanded in ``P_l`` and products of such kernels couple sectors through

    G(l, l', m) = int_{-1}^{1} P_l(t) P_l'(t) P_m(t) dt.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "legendre_eval",
    "legendre_all",
    "legendre_deriv",
    "gauss_legendre",
    "gaunt",
    "gaunt_allowed",
    "GauntTable",
    "gap_ratio",
    "gap_ratio_bound",
]


def _check_degree(ell):
    if int(ell) != ell or ell < 0:
        raise ValueError(f"Legendre degree must be a nonnegative integer, got {ell!r}")
    return int(ell)


def legendre_all(lmax, t):
    """Return ``P_0(t), ..., P_lmax(t)`` stacked along a new leading axis.

    Uses the Bonnet recurrence ``(n+1) P_{n+1} = (2n+1) t P_n - n P_{n-1}``,
    which is stable for all degrees on [-1, 1].
    """
    lmax = _check_degree(lmax)
    t = np.asarray(t, dtype=float)
    out = np.empty((lmax + 1,) + t.shape)
    out[0] = 1.0
    if lmax >= 1:
        out[1] = t
    for n in range(1, lmax):
        out[n + 1] = ((2 * n + 1) * t * out[n] - n * out[n - 1]) / (n + 1)
    return out


def legendre_eval(ell, t):
    """Evaluate ``P_ell(t)`` for ``|t| <= 1`` (scalar or array)."""
    ell = _check_degree(ell)
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) > 1.0):
        raise ValueError("legendre_eval is defined on [-1, 1]")
    vals = legendre_all(ell, t_arr)[ell]
    # P_l(+-1) = (+-1)^l exactly; the recurrence is exact there anyway but
    # pin it so callers can rely on bitwise equality.
    vals = np.where(t_arr == 1.0, 1.0, vals)
    vals = np.where(t_arr == -1.0, (-1.0) ** ell, vals)
    return float(vals) if np.ndim(vals) == 0 else vals


def legendre_deriv(ell, t):
    """Derivative ``P_ell'(t)``.

    Computed with ``P'_{n+1} = P'_{n-1} + (2n+1) P_n``, which avoids the
    ``1/(1-t^2)`` cancellation of the textbook identity.  At ``t = +-1`` the
    analytic endpoint values ``(+-1)^(l+1) l(l+1)/2`` are returned.
    """
    ell = _check_degree(ell)
    t_arr = np.asarray(t, dtype=float)
    if np.any(np.abs(t_arr) > 1.0):
        raise ValueError("legendre_deriv is defined on [-1, 1]")
    p = legendre_all(max(ell, 1), t_arr)
    d = np.zeros((max(ell, 1) + 1,) + t_arr.shape)
    if ell >= 1:
        d[1] = 1.0
    for n in range(1, ell):
        d[n + 1] = d[n - 1] + (2 * n + 1) * p[n]
    vals = d[ell]
    edge = ell * (ell + 1) / 2.0
    vals = np.where(t_arr == 1.0, edge, vals)
    vals = np.where(t_arr == -1.0, (-1.0) ** (ell + 1) * edge, vals)
    return float(vals) if np.ndim(vals) == 0 else vals


def gauss_legendre(n):
    """n-point Gauss-Legendre rule on [-1, 1] as ``(nodes, weights)``.

    Nodes are strictly increasing, weights positive, and the rule is exact
    for polynomials of degree ``2n - 1``.
    """
    if int(n) != n or n < 1:
        raise ValueError("number of nodes must be a positive integer")
    nodes, weights = np.polynomial.legendre.leggauss(int(n))
    return nodes, weights


def gaunt_allowed(l1, l2, l3):
    """Selection rules for the triple Legendre integral."""
    if (l1 + l2 + l3) % 2:
        return False
    return abs(l1 - l2) <= l3 <= l1 + l2


def gaunt(l1, l2, l3):
    """``int_{-1}^1 P_l1 P_l2 P_l3 dt``.

    Forbidden combinations return an exact ``0.0``; allowed ones are
    integrated with a Gauss rule that is exact for the degree involved.
    Indices are sorted first so the result is bitwise symmetric.
    """
    l1, l2, l3 = sorted(_check_degree(x) for x in (l1, l2, l3))
    if not gaunt_allowed(l1, l2, l3):
        return 0.0
    npts = (l1 + l2 + l3) // 2 + 1
    nodes, weights = gauss_legendre(npts)
    p = legendre_all(l3, nodes)
    return float(np.sum(weights * p[l1] * p[l2] * p[l3]))


@dataclass(frozen=True)
class GauntTable:
    """Dense table ``values[l, l', m]`` of triple Legendre integrals.

    Build with :meth:`build`.  The table is never written to after
    construction.
    """

    max_degree: int
    values: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, max_degree):
        max_degree = _check_degree(max_degree)
        n = max_degree + 1
        vals = np.zeros((n, n, n))
        for a in range(n):
            for b in range(a, n):
                for c in range(b, n):
                    g = gaunt(a, b, c)
                    if g == 0.0:
                        continue
                    for i, j, k in {(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)}:
                        vals[i, j, k] = g
        vals.setflags(write=False)
        return cls(max_degree, vals)

    def __call__(self, l1, l2, l3):
        if max(l1, l2, l3) > self.max_degree:
            raise IndexError(
                f"Gaunt index {max(l1, l2, l3)} exceeds table degree {self.max_degree}"
            )
        return float(self.values[l1, l2, l3])


def gap_ratio(l1, l2, samples=100_000):
    """Numerical ``sup_{a in [-1,1)} |P_l1(a) - P_l2(a)| / (1 - a)``.

    The quotient is sampled on Chebyshev-distributed points and the limit
    ``a -> 1`` (equal to ``|l1(l1+1) - l2(l2+1)| / 2``) is appended, since
    the supremum is frequently attained there.
    """
    l1, l2 = _check_degree(l1), _check_degree(l2)
    if l1 == l2:
        return 0.0
    k = np.arange(samples)
    a = -np.cos(np.pi * (k + 0.5) / samples)
    p = legendre_all(max(l1, l2), a)
    quotient = np.abs(p[l1] - p[l2]) / (1.0 - a)
    endpoint = abs(l1 * (l1 + 1) - l2 * (l2 + 1)) / 2.0
    return float(max(quotient.max(), endpoint))


def gap_ratio_bound(l1, l2):
    """Upper bound ``sum_{n=min+1}^{max} (2 + n)`` for :func:`gap_ratio`."""
    lo, hi = sorted((_check_degree(l1), _check_degree(l2)))
    return float(sum(2 + n for n in range(lo + 1, hi + 1)))
