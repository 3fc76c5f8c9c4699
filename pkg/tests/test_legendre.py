import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from sympy import Rational
from sympy.physics.wigner import wigner_3j

from hfbcollapse.legendre import (
    GauntTable,
    gap_ratio,
    gap_ratio_bound,
    gauss_legendre,
    gaunt,
    gaunt_allowed,
    legendre_all,
    legendre_deriv,
    legendre_eval,
)


def gaunt_reference(l1, l2, l3):
    """Exact triple integral from Wigner 3j symbols: 2 (l1 l2 l3; 0 0 0)^2."""
    return float(2 * wigner_3j(l1, l2, l3, 0, 0, 0) ** 2)


# -- legendre_eval ------------------------------------------------------------


def test_legendre_eval_examples():
    assert legendre_eval(0, 0.7) == 1.0
    assert legendre_eval(7, 1.0) == 1.0
    assert legendre_eval(2, 0.5) == pytest.approx(-0.125, abs=1e-15)


def test_legendre_eval_domain():
    with pytest.raises(ValueError):
        legendre_eval(3, 1.0001)
    with pytest.raises(ValueError):
        legendre_eval(-1, 0.2)


def test_legendre_bounded_and_pinned_at_one():
    t = np.random.default_rng(0).uniform(-1, 1, 1000)
    for ell in range(31):
        assert np.all(np.abs(legendre_eval(ell, t)) <= 1.0 + 1e-14)
        assert legendre_eval(ell, 1.0) == 1.0
        assert legendre_eval(ell, -1.0) == (-1.0) ** ell


def test_legendre_matches_numpy_series():
    t = np.linspace(-1, 1, 101)
    for ell in range(25):
        coef = np.zeros(ell + 1)
        coef[ell] = 1.0
        np.testing.assert_allclose(legendre_eval(ell, t), np.polynomial.legendre.legval(t, coef),
                                   atol=1e-12)


def test_recurrence_stable_at_high_degree():
    # orthogonality int P_l^2 = 2/(2l+1) at l = 2000 with an exact rule
    x, w = gauss_legendre(2100)
    p = legendre_all(2000, x)[2000]
    assert np.sum(w * p * p) == pytest.approx(2.0 / 4001, rel=1e-9)


# -- legendre_deriv -----------------------------------------------------------


def test_legendre_deriv_examples():
    assert legendre_deriv(1, 0.3) == pytest.approx(1.0)
    assert legendre_deriv(2, 0.5) == pytest.approx(1.5)
    x = 0.42
    integral, _ = quad(lambda t: legendre_eval(5, t), x, 1.0, epsabs=1e-14, epsrel=1e-14)
    assert legendre_deriv(5, x) == pytest.approx(5 * 6 / (1 - x * x) * integral, rel=1e-11)


def test_legendre_deriv_endpoints_are_analytic_limits():
    for ell in range(12):
        assert legendre_deriv(ell, 1.0) == ell * (ell + 1) / 2
        assert legendre_deriv(ell, -1.0) == (-1) ** (ell + 1) * ell * (ell + 1) / 2
        near = legendre_deriv(ell, 1 - 1e-9)
        assert near == pytest.approx(ell * (ell + 1) / 2, rel=1e-6, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.floats(-0.999, 0.999))
def test_derivative_identity(ell, t):
    lhs = (1 - t * t) * legendre_deriv(ell, t)
    rhs = -ell * t * legendre_eval(ell, t) + ell * legendre_eval(ell - 1, t)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, ell)


# -- gauss_legendre -------------------------------------------------------------


def test_gauss_legendre_examples():
    x, w = gauss_legendre(1)
    assert x.tolist() == [0.0] and w.tolist() == [2.0]
    x, w = gauss_legendre(2)
    np.testing.assert_allclose(x, [-1 / math.sqrt(3), 1 / math.sqrt(3)], rtol=1e-15)
    np.testing.assert_allclose(w, [1.0, 1.0], rtol=1e-15)
    with pytest.raises(ValueError):
        gauss_legendre(0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60))
def test_gauss_legendre_rule_properties(n):
    x, w = gauss_legendre(n)
    assert np.all(w > 0) and np.all(np.diff(x) > 0)
    assert w.sum() == pytest.approx(2.0, rel=1e-13)
    # exact for degree 2n - 1: int t^(2k) = 2/(2k+1)
    k = n - 1
    assert np.sum(w * x ** (2 * k)) == pytest.approx(2.0 / (2 * k + 1), rel=1e-11)


# -- Gaunt integrals ----------------------------------------------------------


def test_gaunt_examples():
    assert gaunt(0, 0, 0) == 2.0
    assert gaunt(3, 1, 5) == 0.0
    assert gaunt(1, 1, 2) == pytest.approx(4 / 15, rel=1e-14)


def test_gaunt_against_wigner_3j():
    for l1, l2, l3 in itertools.product(range(9), repeat=3):
        assert gaunt(l1, l2, l3) == pytest.approx(gaunt_reference(l1, l2, l3), abs=1e-14)


def test_gaunt_table_against_brute_force_quadrature():
    # independent route: a fixed high-order rule, no selection rules applied
    x, w = np.polynomial.legendre.leggauss(64)
    tab = GauntTable.build(10)
    p = legendre_all(10, x)
    brute = np.einsum("q,iq,jq,kq->ijk", w, p, p, p)
    np.testing.assert_allclose(tab.values, brute, atol=1e-13)


def test_gaunt_selection_rules_are_exact_zeros():
    tab = GauntTable.build(8)
    for l1, l2, l3 in itertools.product(range(9), repeat=3):
        v = tab.values[l1, l2, l3]
        if not gaunt_allowed(l1, l2, l3):
            assert v == 0.0 and gaunt(l1, l2, l3) == 0.0
        else:
            assert v > 0.0
        assert abs(v) <= 2.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 12), st.integers(0, 12), st.integers(0, 12))
def test_gaunt_symmetry(a, b, c):
    ref = gaunt(a, b, c)
    for perm in itertools.permutations((a, b, c)):
        assert abs(gaunt(*perm) - ref) <= 1e-14


def test_gaunt_table_is_frozen_and_guarded():
    tab = GauntTable.build(4)
    with pytest.raises(ValueError):
        tab.values[0, 0, 0] = 1.0
    with pytest.raises(IndexError):
        tab(5, 0, 5)


def test_gaunt_completeness():
    # P_l P_l' = sum_m (2m+1)/2 G(l,l',m) P_m, so sum_m (2m+1)/2 G(l,l',m) = P_l(1) P_l'(1) = 1
    tab = GauntTable.build(12)
    for l1 in range(7):
        for l2 in range(7):
            s = sum((2 * m + 1) / 2 * tab(l1, l2, m) for m in range(13))
            assert s == pytest.approx(1.0, abs=1e-13)


def test_gaunt_small_values_are_rational():
    # G(1,1,2) and G(2,2,2) have simple closed forms
    assert Fraction(gaunt(2, 2, 2)).limit_denominator(1000) == Fraction(4, 35)
    assert gaunt_reference(2, 2, 2) == pytest.approx(float(Rational(4, 35)))


# -- gap ratio --------------------------------------------------------------


def test_gap_ratio_examples():
    assert gap_ratio(3, 3) == 0.0
    assert gap_ratio(0, 1) == pytest.approx(1.0, abs=1e-12)
    assert gap_ratio(2, 5) <= gap_ratio_bound(2, 5) == 18.0


def test_gap_ratio_endpoint_limit():
    # the supremum of (P_0 - P_3)/(1-a) is its limit at a = 1: 3*4/2 = 6
    assert gap_ratio(0, 3) == pytest.approx(6.0, rel=1e-12)


def test_gap_ratio_bound_up_to_20():
    for l1 in range(21):
        for l2 in range(l1 + 1, 21):
            assert gap_ratio(l1, l2, samples=20_000) <= gap_ratio_bound(l1, l2) + 1e-12
