import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from affdens.poly import Polynomial, poly_eval
from affdens.weights import (
    BilateralGammaWeight,
    DegenerateWeightError,
    GammaWeight,
    GaussianWeight,
    ProductWeight,
    bilateral_basis_closed,
    bilateral_matrix,
    bilateral_norms,
    bilateral_partial_moment,
    gram_schmidt,
    hermite_basis,
    laguerre_basis,
    laguerre_matrix,
    laguerre_norms,
    product_basis,
    weight_density,
    weight_moment,
)


def _gram_1d(basis, lo, hi, points=None):
    n = len(basis)
    f = lambda x, i, j: (basis.evaluate([x])[0, i] * basis.evaluate([x])[0, j]
                         * basis.weight.density(x))
    G = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = integrate.quad(f, lo, hi, args=(i, j), points=points, limit=400,
                                               epsabs=1e-13)[0]
    return G


def _sign_normalize(coef):
    lead = np.array([row[np.nonzero(row)[0][-1]] for row in coef])
    return coef * np.sign(lead)[:, None]


# densities -----------------------------------------------------------------------

def test_gamma_density_zero_at_origin_and_outside():
    w = GammaWeight(1.5)
    assert w.density(0.0) == 0.0
    assert w.density(-1.0) == 0.0


def _bilateral_c13_elementary(x):
    # shape 9 makes the Bessel index 17/2, so K reduces to a finite sum
    a = abs(x)
    r = 3 * math.sqrt(2) * a
    n = 8
    ksum = sum(math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k) * (2 * r) ** k)
               for k in range(n + 1))
    bessel = math.sqrt(math.pi / (2 * r)) * math.exp(-r) * ksum
    s = 1 / (3 * math.sqrt(2))
    return a**8.5 * bessel / (math.sqrt(math.pi) * math.gamma(9) * s**9.5 * 2**8.5)


def _bilateral_c13_convolution(x):
    k, s = 9, 1 / (3 * math.sqrt(2))
    f = lambda y: (y ** (k - 1) * (y + x) ** (k - 1) * math.exp(-(2 * y + x) / s)
                   / (math.gamma(k) ** 2 * s ** (2 * k)))
    return integrate.quad(f, 0, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]


@pytest.mark.parametrize("x", [0.05, 0.1, 0.2, 1.0, 3.0])
def test_bilateral_third_closed_form(x):
    w = BilateralGammaWeight(1 / 3)
    assert w.density(x) == pytest.approx(_bilateral_c13_elementary(x), rel=1e-10)
    assert w.density(-x) == pytest.approx(_bilateral_c13_convolution(x), rel=1e-10)


@pytest.mark.parametrize("C", [0.1, 1 / 3, 1.0, 3.0])
def test_bilateral_unit_mass(C):
    w = BilateralGammaWeight(C)
    mass = 2 * integrate.quad(w.density, 0, np.inf, limit=400, epsabs=1e-13)[0]
    assert mass == pytest.approx(1.0, abs=1e-8)


def test_bilateral_large_shape_has_no_overflow():
    w = BilateralGammaWeight(0.043)
    xs = np.linspace(-0.2, 0.2, 41)
    d = w.density(xs)
    assert np.all(np.isfinite(d)) and np.all(d > 0)


def test_out_of_support_is_zero():
    assert weight_density(GammaWeight(0.5), -0.1) == 0.0


# moments -------------------------------------------------------------------------

def test_gamma_first_moment():
    assert weight_moment(GammaWeight(2.3), 1) == pytest.approx(3.3)


@pytest.mark.parametrize("C", [0.2, 1.0, 2.5])
def test_bilateral_low_moments(C):
    w = BilateralGammaWeight(C)
    got = [w.moment(n) for n in (1, 2, 3, 4)]
    assert got == pytest.approx([0, 1, 0, C + 3], abs=1e-12)


def test_gamma_fifth_moment_by_quadrature():
    w = GammaWeight(0.5)
    q = integrate.quad(lambda x: x**5 * w.density(x), 0, np.inf, epsabs=0, epsrel=1e-12)[0]
    assert w.moment(5) == pytest.approx(q, rel=1e-9)


@pytest.mark.parametrize("C", [0.5, 2.0])
def test_bilateral_char_fn_normalization(C):
    # cumulants of log (1 + C u^2/6)^(-3/C): variance 1, fourth cumulant C
    w = BilateralGammaWeight(C)
    assert w.cumulant(2) == pytest.approx(1.0)
    assert w.cumulant(4) == pytest.approx(C)
    h = 1e-3
    lc = lambda u: math.log(float(w.char_fn(u)))
    second = (lc(h) - 2 * lc(0) + lc(-h)) / h**2
    assert -second == pytest.approx(1.0, rel=1e-5)


@pytest.mark.parametrize("w,lo,hi", [
    (GammaWeight(0.7), 0, np.inf), (GammaWeight(4.0), 0, np.inf),
    (BilateralGammaWeight(0.5), -np.inf, np.inf), (GaussianWeight(0.3, 2.0), -np.inf, np.inf),
])
def test_moments_match_quadrature(w, lo, hi):
    for n in range(9):
        f = lambda x: x**n * w.density(x)
        if lo == -np.inf:
            q = integrate.quad(f, -np.inf, 0, epsabs=1e-14, limit=400)[0] + integrate.quad(
                f, 0, np.inf, epsabs=1e-14, limit=400)[0]
        else:
            q = integrate.quad(f, 0, np.inf, epsabs=1e-14, limit=400)[0]
        assert w.moment(n) == pytest.approx(q, rel=1e-8, abs=1e-12)


def test_product_moment_factorizes():
    w = ProductWeight((GammaWeight(2.0), BilateralGammaWeight(1.0)))
    assert w.moment((2, 4)) == pytest.approx(GammaWeight(2.0).moment(2) * 4.0)


# bases ---------------------------------------------------------------------------

@pytest.mark.parametrize("D", [0.5, 3.0, 10.0])
def test_gram_schmidt_reproduces_laguerre(D):
    gs = gram_schmidt(GammaWeight(D), 4)
    closed = laguerre_basis(D, 4)
    np.testing.assert_allclose(_sign_normalize(gs.coef), _sign_normalize(closed.coef), rtol=1e-10, atol=1e-12)
    ho = [math.sqrt(np.prod([(i + D) for i in range(1, n + 1)]) / math.factorial(n)) for n in range(5)]
    np.testing.assert_allclose(laguerre_norms(D, 4), ho, rtol=1e-14)


def test_laguerre_first_elements_have_printed_form():
    D = 2.0
    b = laguerre_basis(D, 2)
    ho = laguerre_norms(D, 2)
    # printed first element -xi + D + 1, normalized, up to overall sign
    np.testing.assert_allclose(np.abs(b.coef[1, :2]), np.abs(np.array([D + 1, -1.0]) / ho[1]))
    h2 = np.array([(D * D + 3 * D + 2) / 2, -(D + 2), 0.5]) / ho[2]
    np.testing.assert_allclose(b.coef[2], h2, rtol=1e-13)


def test_gaussian_gram_schmidt_is_normalized_hermite():
    gs = gram_schmidt(GaussianWeight(0.0, 1.0), 3)
    he = [[1], [0, 1], [-1, 0, 1], [0, -3, 0, 1]]
    for n, c in enumerate(he):
        row = np.zeros(4)
        row[: len(c)] = c
        np.testing.assert_allclose(gs.coef[n], row / math.sqrt(math.factorial(n)), atol=1e-13)
    np.testing.assert_allclose(hermite_basis(3).coef, gs.coef, atol=1e-13)


@pytest.mark.parametrize("C", [1 / 3, 1.0, 3.0])
def test_gram_schmidt_reproduces_bilateral_closed_form(C):
    gs = gram_schmidt(BilateralGammaWeight(C), 4)
    closed = bilateral_basis_closed(C, 4)
    np.testing.assert_allclose(_sign_normalize(gs.coef), _sign_normalize(closed.coef), rtol=1e-10, atol=1e-12)
    assert bilateral_norms(C)[2] == pytest.approx(math.sqrt(C + 2))
    np.testing.assert_allclose(gs.norms, bilateral_norms(C), rtol=1e-10)


def test_bilateral_third_element_root():
    C = 1.0
    b = bilateral_basis_closed(C, 4)
    assert abs(b.evaluate([2.0])[0, 3]) < 1e-14


def test_leading_coefficients_positive():
    for basis in (gram_schmidt(GammaWeight(1.0), 5), gram_schmidt(BilateralGammaWeight(0.7), 5)):
        lead = [basis.coef[n, n] for n in range(6)]
        assert all(c > 0 for c in lead)


def test_degenerate_weight():
    class Point(GammaWeight):
        def moment_mp(self, n):
            import mpmath as mp
            return mp.mpf(2) ** n

    with pytest.raises(DegenerateWeightError):
        gram_schmidt(Point(1.0), 2)


def test_vectorized_coefficient_arrays():
    D = np.array([0.5, 3.0, 17.2])
    L = laguerre_matrix(D, 6)
    for i, d in enumerate(D):
        np.testing.assert_allclose(L[i], laguerre_basis(d, 6).coef, rtol=1e-12, atol=1e-14)
    C = np.array([0.2, 1.0, 4.0])
    B = bilateral_matrix(C, 4)
    for i, c in enumerate(C):
        np.testing.assert_allclose(B[i], bilateral_basis_closed(c, 4).coef, rtol=1e-14)


def test_product_basis_elements():
    g = laguerre_basis(1.5, 2)
    b = bilateral_basis_closed(0.8, 2)
    pb = product_basis([g, b], 2)
    assert pb.indices == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    pts = np.random.default_rng(2).uniform(0.1, 3, (5, 2))
    expect = g.evaluate(pts[:, 0])[:, 1] * b.evaluate(pts[:, 1])[:, 1]
    np.testing.assert_allclose(pb[(1, 1)].terms and poly_eval(pb[(1, 1)], pts), expect, rtol=1e-12)
    with pytest.raises(ValueError):
        product_basis([g, b], 3)


def test_product_gram_identity_by_quadrature():
    D, C = 1.5, 1.0
    pb = product_basis([laguerre_basis(D, 2), bilateral_basis_closed(C, 2)], 2)
    xg, wg = special.roots_genlaguerre(40, D)
    wg = wg / special.gamma(1 + D)
    fx = lambda x: pb.evaluate(x)
    # second factor: adaptive quadrature on a fine grid
    t = np.linspace(-25, 25, 20001)
    wt = BilateralGammaWeight(C).density(t)
    G = np.zeros((6, 6))
    for x, w in zip(xg, wg):
        H = pb.evaluate(np.column_stack([np.full_like(t, x), t]))
        G += w * integrate.trapezoid(H[:, :, None] * H[:, None, :] * wt[:, None, None], t, axis=0)
    np.testing.assert_allclose(G, np.eye(6), atol=1e-7)


@pytest.mark.parametrize("w,lo,hi,pts", [
    (GammaWeight(0.5), 0, np.inf, None), (GammaWeight(6.0), 0, np.inf, None),
    (BilateralGammaWeight(0.5), -np.inf, np.inf, None), (BilateralGammaWeight(2.0), -np.inf, np.inf, None),
])
def test_orthonormality_by_quadrature(w, lo, hi, pts):
    basis = w.basis(6)
    if lo == -np.inf:
        G = _gram_1d(basis, -np.inf, 0) + _gram_1d(basis, 0, np.inf)
    else:
        G = _gram_1d(basis, lo, hi)
    assert np.max(np.abs(G - np.eye(7))) <= 1e-6


# partial moments -----------------------------------------------------------------

def test_partial_moment_examples():
    for C in (0.3, 1.0, 4.0):
        assert bilateral_partial_moment(0.0, 0, C) == pytest.approx(0.5, abs=1e-14)
        assert bilateral_partial_moment(np.inf, 2, C) == pytest.approx(1.0)
        w = BilateralGammaWeight(C)
        absm = 2 * integrate.quad(lambda x: x * w.density(x), 0, np.inf, limit=400)[0]
        assert bilateral_partial_moment(0.0, 1, C) == pytest.approx(-absm / 2, rel=1e-9)


def test_partial_moment_against_extended_precision(golden):
    for rec in golden["bilateral_partial_moment"]:
        got = bilateral_partial_moment(rec["K"], rec["n"], rec["C"])
        assert got == pytest.approx(rec["value"], rel=1e-8, abs=1e-11), rec


@given(st.floats(0.1, 4.0), st.floats(-3, 3), st.floats(0.01, 3), st.integers(0, 6))
def test_partial_moment_increments(C, k1, width, n):
    k2 = k1 + width
    w = BilateralGammaWeight(C)
    pts = [0.0] if k1 < 0 < k2 else None
    q = integrate.quad(lambda x: x**n * w.density(x), k1, k2, points=pts, limit=400, epsabs=1e-13)[0]
    diff = bilateral_partial_moment(k2, n, C) - bilateral_partial_moment(k1, n, C)
    assert diff == pytest.approx(q, abs=1e-8)


@given(st.floats(-1.0, 20.0).filter(lambda v: v > -0.99), st.integers(1, 7))
def test_laguerre_recurrence_consistency(D, J):
    b = GammaWeight(D).basis(J)
    assert b.coef.shape == (J + 1, J + 1)
    assert np.all(np.diag(b.coef) > 0)
