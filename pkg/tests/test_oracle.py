import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from affdens.affine import AffineModel, bajd_model, conditional_moments, heston_model
from affdens.oracle import (
    RiccatiError,
    bajd_density_fourier,
    bajd_transition_cdf,
    bajd_transition_density,
    black_scholes_call,
    char_fn,
    fourier_cdf,
    fourier_density,
    heston_call,
    heston_joint_density,
    heston_marginal_density,
    implied_vol,
    integrated_cdf,
    integrated_char_fn,
    integrated_density,
    integrated_mgf,
    mgf,
    solve_riccati,
    solve_riccati_from,
)

from .conftest import HESTON, INTEGRATED, INTEGRATED_Y0
from .test_affine import _exact_bajd_paths

MONTHLY = (0.04, 1.0, 0.2, 3.0, 0.01)
CIR = (0.05, 0.8, 0.1)


def _cir_psi(u, kappa, sigma, t):
    # psi' = sigma^2/2 psi^2 - kappa psi with psi(0) = i u
    a = sigma**2 / 2
    w = 1j * u
    e = math.exp(-kappa * t)
    return w * e / (1 - a * w * (1 - e) / kappa)


# Riccati solver ------------------------------------------------------------------

def test_zero_probe_is_fixed_point():
    sol = solve_riccati(heston_model(**HESTON), [[0.0, 0.0]], 3.0)
    assert np.all(sol.phi == 0) and np.all(sol.psi == 0)


def test_cir_closed_form():
    kth, kappa, sigma = CIR
    u = np.array([0.3, 2.0, 40.0, -7.0])
    sol = solve_riccati(bajd_model(kth, kappa, sigma, 0, 0), u[:, None], 1.3)
    np.testing.assert_allclose(sol.psi[:, 0], _cir_psi(u, kappa, sigma, 1.3), rtol=1e-9)
    assert np.all(sol.psi[:, 0].real <= 0)


def test_linear_block_exact():
    m = AffineModel(m=0, n=1, a=[[0.5]], alpha=(), b=[0.1], beta=[[-0.7]])
    u = np.array([[0.4], [3.0]])
    sol = solve_riccati(m, u, 2.0)
    np.testing.assert_allclose(sol.psi[:, 0], 1j * np.exp(-0.7 * 2.0) * u[:, 0], rtol=1e-10)


def test_pole_crossing_is_reported():
    with pytest.raises(RiccatiError):
        solve_riccati_from(bajd_model(*MONTHLY), [[150.0]], 1.0)


def test_flow_property():
    model = heston_model(**HESTON)
    u = np.array([[0.5, 2.0], [-1.0, 7.0]])
    t1, t2 = 0.3, 0.45
    a = solve_riccati(model, u, t1)
    b = solve_riccati_from(model, a.psi, t2, phi0=a.phi)
    c = solve_riccati(model, u, t1 + t2)
    np.testing.assert_allclose(b.psi, c.psi, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(b.phi, c.phi, rtol=1e-8, atol=1e-12)


# characteristic function ------------------------------------------------------

def test_char_fn_basics():
    model = heston_model(**HESTON)
    x0 = [0.04, 5.1]
    assert char_fn(model, [[0.0, 0.0]], 0.5, x0)[0] == 1.0
    u = np.random.default_rng(0).normal(0, 20, (30, 2))
    cf = char_fn(model, u, 0.5, x0)
    assert np.all(np.abs(cf) <= 1 + 1e-12)
    np.testing.assert_allclose(char_fn(model, -u, 0.5, x0), np.conj(cf), rtol=1e-12, atol=1e-14)


@given(st.floats(0.01, 0.2), st.floats(0.1, 3.0), st.floats(0.05, 0.5), st.floats(0, 4), st.floats(0, 0.05),
       st.floats(-50, 50))
def test_char_fn_hermitian(kth, kappa, sigma, l, nu, u):
    model = bajd_model(kth, kappa, sigma, l, nu)
    a, b = char_fn(model, [[u], [-u]], 0.25, [0.05])
    assert abs(a - np.conj(b)) <= 1e-12


def test_char_fn_derivative_is_mean():
    model = bajd_model(*MONTHLY)
    h = 1e-4
    cf = char_fn(model, [[h], [-h]], 1 / 12, [0.07])
    d = (cf[0] - cf[1]) / (2 * h)
    m1 = conditional_moments(model, [0.07], 1 / 12, 1)[(1,)]
    assert d.imag == pytest.approx(m1, rel=1e-6)


def test_real_mgf_matches_moments():
    model = bajd_model(*MONTHLY)
    h = 1e-4
    m = mgf(model, [[h], [-h]], 0.5, [0.07])
    m1 = conditional_moments(model, [0.07], 0.5, 1)[(1,)]
    assert (m[0] - m[1]) / (2 * h) == pytest.approx(m1, rel=1e-6)


# Fourier inversion ------------------------------------------------------------

def test_fourier_density_cir_matches_noncentral_chi_square():
    kth, kappa, sigma = CIR
    t, y0 = 0.5, 0.04
    y = np.linspace(0.005, 0.2, 25)
    e = math.exp(-kappa * t)
    c = sigma**2 * (1 - e) / (4 * kappa)
    ref = stats.ncx2.pdf(y / c, 4 * kth / sigma**2, y0 * e / c) / c
    got = fourier_density(bajd_model(kth, kappa, sigma, 0, 0), y, t, [y0])
    np.testing.assert_allclose(got, ref, rtol=1e-8, atol=1e-10)


def test_fourier_density_unit_mass_and_cdf_shape():
    model = bajd_model(*MONTHLY)
    y = np.linspace(1e-4, 0.4, 4001)
    d = fourier_density(model, y, 1 / 12, [0.07])
    assert integrate.simpson(d, x=y) == pytest.approx(1.0, abs=1e-6)
    F = fourier_cdf(model, y[::40], 1 / 12, [0.07])
    assert np.all(np.diff(F) >= -1e-6)
    assert F.min() >= -1e-6 and F.max() <= 1 + 1e-6


def test_fourier_density_against_exact_draws():
    model = bajd_model(*MONTHLY)
    y = _exact_bajd_paths(MONTHLY, 0.07, 1 / 12, 10**6, np.random.default_rng(21))
    edges = np.linspace(0.02, 0.16, 29)
    counts, _ = np.histogram(y, edges)
    prob = np.diff(fourier_cdf(model, edges, 1 / 12, [0.07]))
    expect = prob * y.size
    z = (counts - expect) / np.sqrt(expect)
    assert np.abs(z).max() < 4.5
    assert stats.chi2.sf((z**2).sum(), len(z)) > 1e-3


def test_generic_and_closed_form_bajd_agree():
    y = np.linspace(0.01, 0.3, 30)
    a = fourier_density(bajd_model(*MONTHLY), y, 1 / 12, [0.07])
    b = bajd_transition_density(y, 0.07, 1 / 12, *MONTHLY)
    c = bajd_density_fourier(y, 0.07, 1 / 12, *MONTHLY)
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(c, b, rtol=1e-9, atol=1e-10)


def test_bajd_transition_against_extended_precision(golden):
    for case in golden["bajd_transition"]:
        p, t, y0, y = case["params"], case["t"], case["y0"], case["y"]
        np.testing.assert_allclose(bajd_transition_density(y, y0, t, *p), case["density"], rtol=1e-8)
        np.testing.assert_allclose(bajd_transition_cdf(y, y0, t, *p), case["cdf"], rtol=1e-8, atol=1e-12)


def test_bajd_heavy_jump_regime():
    # mean jump below the diffusive scale: the Gamma mixture alternates, so check both routes
    p = (0.04, 1.0, 0.2, 3.0, 0.001)
    y = np.linspace(0.01, 0.2, 9)
    np.testing.assert_allclose(bajd_transition_density(y, 0.07, 1 / 12, *p),
                               bajd_density_fourier(y, 0.07, 1 / 12, *p), rtol=1e-7, atol=1e-9)


# integrated process -------------------------------------------------------------

def test_integrated_char_fn_basics():
    model = bajd_model(**INTEGRATED)
    assert integrated_char_fn(model, [0.0], 5.0, [INTEGRATED_Y0])[0] == 1.0
    h = 1e-2
    cf = integrated_char_fn(model, [h, -h], 5.0, [INTEGRATED_Y0])
    kth, kappa, l, nu = INTEGRATED["kth"], INTEGRATED["kappa"], INTEGRATED["l"], INTEGRATED["nu"]
    th = (kth + l * nu) / kappa
    t, y0 = 5.0, INTEGRATED_Y0
    mean = th * t + (y0 - th) * (1 - math.exp(-kappa * t)) / kappa
    assert ((cf[0] - cf[1]) / (2 * h)).imag == pytest.approx(mean, rel=1e-6)


@pytest.mark.parametrize("reading", ["literal", "theta"])
def test_integrated_mgf_against_closed_form(golden, reading):
    g = golden["integrated_mgf"][reading]
    got = integrated_mgf(bajd_model(*g["params"]), g["a"], g["horizon"], [g["y0"]])
    np.testing.assert_allclose(np.log(got), g["log_mgf"], atol=1e-10)


def test_integrated_density_against_extended_precision(golden):
    g = golden["integrated_density"]
    assert g["cf_tail"] < 1e-20
    got = integrated_density(bajd_model(*g["params"]), g["z"], g["horizon"], [g["y0"]])
    np.testing.assert_allclose(got, g["density"], rtol=1e-7, atol=1e-9)


def test_integrated_density_peak():
    z = np.linspace(0.004, 0.016, 241)
    d = integrated_density(bajd_model(**INTEGRATED), z, 5.0, [INTEGRATED_Y0])
    assert d.max() == pytest.approx(250, rel=0.05)
    assert 0.0075 <= z[d.argmax()] <= 0.0100
    F = integrated_cdf(bajd_model(**INTEGRATED), [0.004, 0.016], 5.0, [INTEGRATED_Y0])
    assert integrate.simpson(d, x=z) == pytest.approx(F[1] - F[0], abs=1e-6)


# stochastic variance model ------------------------------------------------------

def _heston_args(g):
    return g["dt"], *g["params"], g["v0"], g["x0"]


def test_heston_marginal_against_extended_precision(golden):
    g = golden["heston"]
    got = heston_marginal_density(g["x"], *_heston_args(g))
    np.testing.assert_allclose(got, g["density"], rtol=1e-8)


def test_heston_call_against_extended_precision(golden):
    g = golden["heston"]
    t, *rest = _heston_args(g)
    got = heston_call(g["logK"], t, g["r"], *rest)
    np.testing.assert_allclose(got, g["call"], rtol=1e-8, atol=1e-12)


def test_heston_marginal_matches_generic_riccati():
    p = HESTON
    model = heston_model(**p)
    t, x0 = 1 / 52, [0.04, 5.1]
    u = np.linspace(-60, 60, 13)
    generic = char_fn(model, np.column_stack([np.zeros_like(u), u]), t, x0)
    from affdens.oracle import heston_log_cf
    closed = np.exp(heston_log_cf(u, t, *p.values(), 0.04, 5.1))
    np.testing.assert_allclose(generic, closed, rtol=1e-9, atol=1e-13)


def test_heston_joint_integrates_to_marginal():
    p = tuple(HESTON.values())
    t, v0, x0 = 1 / 52, 0.04, 5.1
    x = 5.1
    v = np.linspace(1e-5, 0.12, 3001)
    joint = heston_joint_density(v, x, t, *p, v0, x0)
    marg = heston_marginal_density([x], t, *p, v0, x0)[0]
    assert integrate.simpson(joint, x=v) == pytest.approx(marg, rel=1e-5)


def test_implied_vol_round_trip():
    for vol in (0.05, 0.2, 0.8):
        c = float(black_scholes_call(100.0, 95.0, 0.3, 0.02, vol))
        assert implied_vol(c, 100.0, 95.0, 0.3, 0.02) == pytest.approx(vol, rel=1e-10)
    assert math.isnan(implied_vol(0.0, 100.0, 95.0, 0.3, 0.02))
