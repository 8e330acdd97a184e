"""Reference transition laws from the affine transform formula.

Generic models go through a vectorized Riccati solver. Closed forms are
used where they exist: the jump-augmented square-root process, the
marginal log-price transform of the stochastic variance model, and the
joint (variance, log-price) density via a Bessel-function kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats
from scipy.integrate import solve_ivp

from .affine import AffineModel, conditional_moments, integrated_model


class RiccatiError(RuntimeError):
    pass


@dataclass
class CharSolution:
    """Solution ``(phi, psi)`` of the Riccati system at horizon ``t``.

    ``phi`` has shape ``(N,)`` and ``psi`` shape ``(N, d)``; ``u`` holds the
    probe points (``psi(0) = i u``, or the supplied initial values).
    """

    phi: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    t: float


def solve_riccati_from(model: AffineModel, psi0, t: float, phi0=None, rtol: float = 1e-10,
                       atol: float = 1e-12) -> CharSolution:
    """Integrate ``(phi, psi)`` forward from arbitrary (complex) initial values."""
    psi0 = np.atleast_2d(np.asarray(psi0, dtype=complex))
    N, d = psi0.shape
    if d != model.d:
        raise ValueError("dimension mismatch")
    phi0 = np.zeros(N, dtype=complex) if phi0 is None else np.asarray(phi0, dtype=complex).reshape(N)
    if t == 0:
        return CharSolution(phi0.copy(), psi0.copy(), psi0, 0.0)
    if np.any(model.pole_distance(psi0) <= 0):
        raise RiccatiError("initial value beyond the jump-transform singularity")

    def rhs(_, y):
        psi = y[N:].reshape(N, d)
        dphi, dpsi = model.riccati_rhs(psi)
        return np.concatenate([dphi, dpsi.ravel()])

    def pole(_, y):
        return model.pole_distance(y[N:].reshape(N, d)).min() - 1e-12

    pole.terminal = True
    y0 = np.concatenate([phi0, psi0.ravel()])
    sol = solve_ivp(rhs, (0.0, t), y0, method="DOP853", rtol=rtol, atol=atol, events=pole)
    if sol.status == 1:
        raise RiccatiError(f"jump-transform pole crossed at t={sol.t_events[0][0]:.6g}")
    if sol.status != 0:
        raise RiccatiError(f"Riccati integration failed: {sol.message}")
    y = sol.y[:, -1]
    return CharSolution(y[:N], y[N:].reshape(N, d), psi0, float(t))


def solve_riccati(model: AffineModel, u, t: float, rtol: float = 1e-10, atol: float = 1e-12) -> CharSolution:
    """Riccati solution with ``psi(0) = i u`` for one or many real probe vectors ``u``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if model.d == 1 and u.shape[0] == 1 and u.shape[1] != 1:
        u = u.T
    sol = solve_riccati_from(model, 1j * u, t, rtol=rtol, atol=atol)
    sol.u = u
    return sol


def char_fn(model: AffineModel, u, t: float, x0) -> np.ndarray:
    """``E[exp(i u^T X_t) | X_0 = x0]`` for each row of ``u``."""
    sol = solve_riccati(model, u, t)
    x0 = np.asarray(x0, dtype=float).reshape(model.d)
    return np.exp(sol.phi + sol.psi @ x0)


def mgf(model: AffineModel, q, t: float, x0) -> np.ndarray:
    """``E[exp(q^T X_t)]`` for real ``q`` by the real Riccati flow."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    sol = solve_riccati_from(model, q, t)
    x0 = np.asarray(x0, dtype=float).reshape(model.d)
    return np.real(np.exp(sol.phi + sol.psi @ x0))


# Fourier inversion --------------------------------------------------------

def _gl_panels(U: float, h: float, order: int = 16):
    npan = max(1, int(math.ceil(U / h)))
    xg, wg = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, npan * h, npan + 1)
    mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * xg).ravel()
    weights = (half[:, None] * wg).ravel()
    return nodes, weights


_CHUNK = 20000


def _chunked(cf, u):
    # bounded memory for long frequency grids
    return np.concatenate([np.asarray(cf(u[i:i + _CHUNK])).ravel() for i in range(0, u.size, _CHUNK)])


def _project(dy, u, vals, part):
    """``part(sum_j exp(-i u_j dy) vals_j)`` for every ``dy``, in blocks of ``u``."""
    out = np.zeros(dy.size)
    step = max(1, 4_000_000 // max(dy.size, 1))
    for i in range(0, u.size, step):
        out += part(np.exp(-1j * np.outer(dy, u[i:i + step])) @ vals[i:i + step])
    return out


def _cutoff(cf, scale: float, tol: float, umax: float) -> tuple[float, float]:
    """Smallest probe ``U`` beyond which ``|cf|`` stays below ``tol``."""
    grid = np.geomspace(1e-2 / scale, umax, 160)
    mod = np.abs(cf(grid))
    above = np.nonzero(mod >= tol)[0]
    if above.size == 0:
        return grid[0], 0.0
    k = above[-1]
    if k == grid.size - 1:
        return umax, float(mod[-1])
    return float(grid[k + 1]), float(mod[k + 1])


def fourier_density_from_cf(cf, y, center: float, scale: float, tol: float = 1e-12,
                            umax: float | None = None, return_error: bool = False):
    """Density ``(1/pi) int_0^inf Re[exp(-i u y) cf(u)] du`` by composite Gauss-Legendre.

    ``cf`` is a vectorized callable, ``center`` and ``scale`` the mean and
    standard deviation used to size the quadrature. The integral is cut
    where ``|cf|`` falls below ``tol``; the returned error estimate is the
    modulus at the cutoff times the cutoff frequency.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    umax = umax or 1e5 / scale
    U, tail = _cutoff(cf, scale, tol, umax)
    w = max(np.abs(y - center).max(), 1e-300)
    h = min(2.0 / scale, 2 * math.pi / w)
    u, wt = _gl_panels(U, h)
    phi = _chunked(cf, u) * np.exp(-1j * u * center)
    dens = _project(y - center, u, phi * wt, np.real) / math.pi
    err = tail * U / math.pi
    return (dens, err) if return_error else dens


def fourier_cdf_from_cf(cf, y, center: float, scale: float, tol: float = 1e-12, umax: float | None = None):
    """Gil-Pelaez CDF ``1/2 - (1/pi) int_0^inf Im[exp(-i u y) cf(u)]/u du``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    umax = umax or 1e5 / scale
    U, _ = _cutoff(lambda v: cf(v) / np.maximum(v, 1e-300) * scale, scale, tol, umax)
    w = max(np.abs(y - center).max(), 1e-300)
    h = min(2.0 / scale, 2 * math.pi / w)
    u, wt = _gl_panels(U, h)
    phi = _chunked(cf, u) * np.exp(-1j * u * center)
    return 0.5 - _project(y - center, u, phi * wt / u, np.imag) / math.pi


def _scalar_stats(model, t, x0):
    mom = conditional_moments(model, x0, t, 2)
    m1 = mom[(1,)]
    return m1, math.sqrt(max(mom[(2,)] - m1 * m1, 1e-300))


def fourier_density(model: AffineModel, y, t: float, x0, tol: float = 1e-12, return_error: bool = False):
    """Transition density of a scalar model by Fourier inversion of the Riccati transform."""
    if model.d != 1:
        raise ValueError("fourier_density handles scalar models; use the dedicated joint oracles")
    mean, sd = _scalar_stats(model, t, x0)
    cf = lambda u: char_fn(model, np.asarray(u).reshape(-1, 1), t, x0)
    return fourier_density_from_cf(cf, y, mean, sd, tol=tol, return_error=return_error)


def fourier_cdf(model: AffineModel, y, t: float, x0, tol: float = 1e-12):
    if model.d != 1:
        raise ValueError("fourier_cdf handles scalar models")
    mean, sd = _scalar_stats(model, t, x0)
    cf = lambda u: char_fn(model, np.asarray(u).reshape(-1, 1), t, x0)
    return fourier_cdf_from_cf(cf, y, mean, sd, tol=tol)


# integrated process ------------------------------------------------------------

def integrated_char_fn(model: AffineModel, v, t: float, x0) -> np.ndarray:
    """``E[exp(i v int_0^t X_s ds)]`` for a scalar nonnegative model."""
    aug = integrated_model(model)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    psi0 = np.column_stack([np.zeros_like(v), v]) * 1j
    sol = solve_riccati_from(aug, psi0, t)
    return np.exp(sol.phi + sol.psi[:, 0] * float(np.ravel(x0)[0]))


def integrated_mgf(model: AffineModel, a, t: float, x0) -> np.ndarray:
    """``E[exp(a int_0^t X_s ds)]`` for real ``a`` (real Riccati flow)."""
    aug = integrated_model(model)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    sol = solve_riccati_from(aug, np.column_stack([np.zeros_like(a), a]), t)
    return np.real(np.exp(sol.phi + sol.psi[:, 0] * float(np.ravel(x0)[0])))


def integrated_moments(model: AffineModel, t: float, x0, k: int = 2) -> dict:
    aug = integrated_model(model)
    mom = conditional_moments(aug, [float(np.ravel(x0)[0]), 0.0], t, k)
    return {j: mom[(0, j)] for j in range(k + 1)}


def integrated_density(model: AffineModel, z, t: float, x0, tol: float = 1e-12, return_error: bool = False):
    """Density of ``int_0^t X_s ds`` by Fourier inversion of :func:`integrated_char_fn`."""
    mom = integrated_moments(model, t, x0)
    sd = math.sqrt(mom[2] - mom[1] ** 2)
    cf = lambda v: integrated_char_fn(model, v, t, x0)
    return fourier_density_from_cf(cf, z, mom[1], sd, tol=tol, return_error=return_error)


def integrated_cdf(model: AffineModel, z, t: float, x0, tol: float = 1e-12):
    mom = integrated_moments(model, t, x0)
    sd = math.sqrt(mom[2] - mom[1] ** 2)
    cf = lambda v: integrated_char_fn(model, v, t, x0)
    return fourier_cdf_from_cf(cf, z, mom[1], sd, tol=tol)


# jump-augmented square-root process -------------------------------------------

def bajd_exponents(kth, kappa, sigma, l, nu, w, t):
    """Closed-form ``(phi, psi)`` with ``E[exp(w Y_t)] = exp(phi + psi y0)``.

    ``w`` may be complex (``w = i u`` gives the characteristic function,
    ``w = -s`` the Laplace transform).
    """
    w = np.asarray(w, dtype=complex)
    c = sigma**2 / (2 * kappa)
    E = math.exp(-kappa * t)
    den = 1.0 - c * w * (1.0 - E)
    psi = w * E / den
    phi = -(2 * kth / sigma**2) * np.log(den)
    if l > 0 and nu > 0:
        if abs(c - nu) <= 1e-10 * max(c, nu):
            phi = phi + l * nu * w * (1.0 - E) / (kappa * (1.0 - nu * w))
        else:
            p = l * nu / (kappa * (c - nu))
            phi = phi + p * (np.log(1.0 - nu * w) - np.log(1.0 - w * (c * (1.0 - E) + nu * E)))
    return phi, psi


def bajd_atom_weight(kth, kappa, sigma, l, nu, t) -> float:
    """Limit of the jump factor of the transform as ``|u| -> inf``."""
    if not (l > 0 and nu > 0):
        return 1.0
    c = sigma**2 / (2 * kappa)
    E = math.exp(-kappa * t)
    if abs(c - nu) <= 1e-10 * max(c, nu):
        return math.exp(-l * (1.0 - E) / kappa)
    beta = c * (1.0 - E) + nu * E
    p = l * nu / (kappa * (c - nu))
    return (nu / beta) ** p


def cir_density(y, y0, kth, kappa, sigma, t):
    """Noncentral chi-square transition density of the square-root diffusion."""
    E = math.exp(-kappa * t)
    scale = sigma**2 * (1.0 - E) / (4.0 * kappa)
    df = 4.0 * kth / sigma**2
    nc = np.asarray(y0, dtype=float) * E / scale
    return stats.ncx2.pdf(np.asarray(y, dtype=float) / scale, df, nc) / scale


def cir_cdf(y, y0, kth, kappa, sigma, t):
    E = math.exp(-kappa * t)
    scale = sigma**2 * (1.0 - E) / (4.0 * kappa)
    df = 4.0 * kth / sigma**2
    nc = np.asarray(y0, dtype=float) * E / scale
    return stats.ncx2.cdf(np.asarray(y, dtype=float) / scale, df, nc)


def talbot_invert(F, t, M: int = 32):
    """Fixed-Talbot inverse Laplace transform.

    ``F`` maps a complex array of shape ``(len(t), M)`` to values of the
    transform; the singularities of ``F`` must lie on the negative real
    axis. Returns ``f(t)`` for every ``t > 0``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0):
        raise ValueError("talbot_invert needs t > 0")
    r = 2.0 * M / (5.0 * t)
    theta = np.arange(1, M) * math.pi / M
    cot = 1.0 / np.tan(theta)
    s = np.empty((t.size, M), dtype=complex)
    s[:, 0] = r
    s[:, 1:] = r[:, None] * theta * (cot + 1j)
    sig = theta + (theta * cot - 1.0) * cot
    Fv = F(s)
    head = 0.5 * (np.exp(r * t) * Fv[:, 0]).real
    body = (np.exp(t[:, None] * s[:, 1:]) * Fv[:, 1:] * (1.0 + 1j * sig)).real.sum(axis=1)
    return r / M * (head + body)


def _jump_series(kth, kappa, sigma, l, nu, t):
    """Coefficients ``b_k`` and scale ``a`` with ``f_Z = sum_k b_k Gamma(k, a)`` on ``z > 0``.

    ``Z`` is the jump contribution to ``Y_t``: independent of the diffusive
    part, with an atom of size ``R_inf`` at zero. Returns ``None`` for the
    coefficients when the binomial series converges too slowly.
    """
    c = sigma**2 / (2 * kappa)
    E = math.exp(-kappa * t)
    R = bajd_atom_weight(kth, kappa, sigma, l, nu, t)
    if not (l > 0 and nu > 0):
        return R, nu, np.zeros(0)
    if abs(c - nu) <= 1e-10 * max(c, nu):
        lam = l * (1.0 - E) / kappa
        k = np.arange(1, int(lam + 12 * math.sqrt(lam) + 40))
        return R, nu, R * np.exp(k * math.log(lam) - special.gammaln(k + 1))
    a = c * (1.0 - E) + nu * E
    p = l * nu / (kappa * (c - nu))
    beta = a / nu - 1.0
    if abs(beta) > 0.95:
        return R, a, None
    co, out = 1.0, []
    for k in range(1, 5000):
        co *= (p - k + 1) / k * beta
        out.append(co)
        if k > abs(p) + 5 and abs(co) < 1e-18:
            break
    return R, a, R * np.array(out)


def bajd_jump_density(z, kth, kappa, sigma, l, nu, t):
    """Density of the continuous part of the jump contribution ``Z`` (total mass ``1 - R_inf``)."""
    z = np.asarray(z, dtype=float)
    R, a, b = _jump_series(kth, kappa, sigma, l, nu, t)
    out = np.zeros(z.shape)
    pos = z > 0
    if b is not None and b.size == 0:
        return out
    zp = z[pos]
    if b is None:
        # only branch points on the negative axis: the Talbot contour is safe here
        c = sigma**2 / (2 * kappa)
        E = math.exp(-kappa * t)
        aa = c * (1.0 - E) + nu * E
        p = l * nu / (kappa * (c - nu))
        F = lambda s: np.exp(p * (np.log1p(nu * s) - np.log1p(aa * s))) - R
        out[pos] = talbot_invert(F, zp.ravel(), 24).reshape(zp.shape)
        return out
    k = np.arange(1, b.size + 1)
    lz = np.log(zp)[..., None]
    terms = b * np.exp((k - 1) * lz - zp[..., None] / a - special.gammaln(k) - k * math.log(a))
    out[pos] = terms.sum(axis=-1)
    return out


def _diffusive_law(y0, kth, kappa, sigma, t):
    E = math.exp(-kappa * t)
    scale = sigma**2 * (1.0 - E) / (4.0 * kappa)
    df = 4.0 * kth / sigma**2
    return scale, df, np.asarray(y0, dtype=float) * E / scale


def _convolve_jumps(y, y0, pars, t, kernel, n):
    """``int_0^y f_Z(y - x) kernel(x) dx`` with panels around the bulk of the diffusive part."""
    kth, kappa, sigma, l, nu = pars
    scale, df, nc = _diffusive_law(y0, kth, kappa, sigma, t)
    al = 0.5 * df
    m = scale * (df + nc)
    sd = scale * np.sqrt(2 * (df + 2 * nc))
    uj, wj = special.roots_jacobi(n, 0.0, al - 1.0)
    ul, wl = np.polynomial.legendre.leggauss(n)
    e1 = np.clip(m - 8 * sd, 0.0, y)
    e2 = np.clip(m + 8 * sd, 0.0, y)
    e3 = np.clip(m + 60 * sd, 0.0, y)
    # the first panel carries the x^(al-1) behaviour of the kernel at zero
    b1 = np.where(e1 > 0, e1, e2)
    total = np.zeros(y.shape)
    for lo, hi, first in ((np.zeros_like(y), b1, True), (b1, e2, False), (e2, e3, False)):
        h = 0.5 * (hi - lo)
        if first:
            x = lo[:, None] + h[:, None] * (1 + uj)
            with np.errstate(divide="ignore", invalid="ignore"):
                kx = kernel(x, nc[:, None], scale, df) / x ** (al - 1.0)
            vals = np.where(x > 0, kx, 0.0) * bajd_jump_density(y[:, None] - x, *pars, t)
            total += h**al * (vals @ wj)
        else:
            x = 0.5 * (hi + lo)[:, None] + h[:, None] * ul
            vals = kernel(x, nc[:, None], scale, df) * bajd_jump_density(y[:, None] - x, *pars, t)
            total += h * (vals @ wl)
    return total, e3


def _ncx_pdf(x, nc, scale, df):
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.exp(stats.ncx2.logpdf(x / scale, df, nc)) / scale
    return np.where(x > 0, v, 0.0)


def _ncx_cdf(x, nc, scale, df):
    return np.where(x > 0, special.chndtr(np.maximum(x, 0.0) / scale, df, nc), 0.0)


def bajd_transition_density(y, y0, t, kth, kappa, sigma, l, nu, n: int = 32):
    """Transition density of the jump-augmented square-root process.

    ``Y_t`` given ``y0`` is the sum of a scaled noncentral chi-square
    variable and an independent jump contribution whose law is an atom at
    zero plus a Gamma mixture; the density is their convolution, taken by
    Gauss quadrature in panels around the bulk of the chi-square part.
    Vectorized over pairs ``(y, y0)``.
    """
    y, y0 = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(y0, dtype=float))
    shape = y.shape
    y, y0 = y.ravel(), y0.ravel()
    out = np.zeros(y.size)
    pos = y > 0
    if np.any(pos):
        pars = (kth, kappa, sigma, l, nu)
        R = bajd_atom_weight(*pars, t)
        scale, df, nc = _diffusive_law(y0[pos], kth, kappa, sigma, t)
        out[pos] = R * _ncx_pdf(y[pos], nc, scale, df)
        if R < 1.0:
            out[pos] += _convolve_jumps(y[pos], y0[pos], pars, t, _ncx_pdf, n)[0]
    return out.reshape(shape)


def bajd_transition_cdf(y, y0, t, kth, kappa, sigma, l, nu, n: int = 32):
    """``P(Y_t <= y | y0)`` by the same convolution with the chi-square CDF as kernel."""
    y, y0 = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(y0, dtype=float))
    shape = y.shape
    y, y0 = y.ravel(), y0.ravel()
    out = np.zeros(y.size)
    pos = y > 0
    if np.any(pos):
        pars = (kth, kappa, sigma, l, nu)
        R = bajd_atom_weight(*pars, t)
        scale, df, nc = _diffusive_law(y0[pos], kth, kappa, sigma, t)
        out[pos] = R * _ncx_cdf(y[pos], nc, scale, df)
        if R < 1.0:
            conv, e3 = _convolve_jumps(y[pos], y0[pos], pars, t, _ncx_cdf, n)
            # beyond e3 the chi-square CDF is 1: add the jump mass on (0, y - e3)
            rest = bajd_jump_cdf(y[pos] - e3, *pars, t)
            out[pos] += conv + rest
    return np.clip(out.reshape(shape), 0.0, 1.0)


def bajd_jump_cdf(z, kth, kappa, sigma, l, nu, t):
    """``P(0 < Z <= z)`` for the continuous part of the jump contribution."""
    z = np.asarray(z, dtype=float)
    R, a, b = _jump_series(kth, kappa, sigma, l, nu, t)
    out = np.zeros(z.shape)
    pos = z > 0
    if not np.any(pos) or (b is not None and b.size == 0):
        return out
    if b is None:
        xg, wg = np.polynomial.legendre.leggauss(64)
        zp = z[pos]
        x = 0.5 * zp[:, None] * (1 + xg)
        out[pos] = 0.5 * zp * (bajd_jump_density(x, kth, kappa, sigma, l, nu, t) @ wg)
        return out
    k = np.arange(1, b.size + 1)
    out[pos] = special.gammainc(k, z[pos][:, None] / a) @ b
    return out


def bajd_density_fourier(y, y0, t, kth, kappa, sigma, l, nu, tol: float = 1e-13, return_error: bool = False):
    """Independent Fourier route for a single starting point ``y0``.

    The transform factors into the square-root part times a jump factor
    that tends to a constant ``R_inf``; ``R_inf`` times the noncentral
    chi-square density is exact and only the remainder is inverted.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    R_inf = bajd_atom_weight(kth, kappa, sigma, l, nu, t)

    def rem(u):
        w = 1j * np.asarray(u, dtype=float)
        phi, psi = bajd_exponents(kth, kappa, sigma, l, nu, w, t)
        phic, _ = bajd_exponents(kth, kappa, sigma, 0.0, 0.0, w, t)
        cir = np.exp(phic + psi * y0)
        return cir * (np.exp(phi - phic) - R_inf)

    from .affine import bajd_model
    mean, sd = _scalar_stats(bajd_model(kth, kappa, sigma, l, nu), t, [y0])
    cont, err = fourier_density_from_cf(rem, y, mean, sd, tol=tol, umax=1e7 / sd, return_error=True)
    dens = R_inf * cir_density(y, y0, kth, kappa, sigma, t) + cont
    dens = np.where(y > 0, dens, 0.0)
    return (dens, err) if return_error else dens


# stochastic variance model ----------------------------------------------------

def riccati_const(A, B, C, t):
    """Solution of ``psi' = A psi^2 + B psi + C``, ``psi(0) = 0``, and ``int_0^t psi``.

    Uses the root ordering that keeps the logarithm on its principal branch.
    """
    d = np.sqrt(B * B - 4 * A * C)
    rm = (-B - d) / (2 * A)
    rp = (-B + d) / (2 * A)
    g = rm / rp
    ed = np.exp(-d * t)
    psi = rm * (1 - ed) / (1 - g * ed)
    ipsi = rm * t - np.log((1 - g * ed) / (1 - g)) / A
    return psi, ipsi


def heston_log_cf(u, t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0):
    """``log E[exp(i u X_t)]``; ``u`` may be complex for damped transforms."""
    u = np.asarray(u, dtype=complex)
    A = sigma**2 / 2
    B = rho * sigma * 1j * u - kappa_v
    C = -0.5 * u * u - 0.5j * u
    psi, ipsi = riccati_const(A, B, C, t)
    return kth_v * ipsi + 1j * u * (x0 + kth_x * t) + psi * v0


def heston_marginal_stats(t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0):
    from .affine import heston_model
    mom = conditional_moments(heston_model(kappa_v, kth_v, sigma, kth_x, rho), [v0, x0], t, 2)
    m = mom[(0, 1)]
    return m, math.sqrt(mom[(0, 2)] - m * m)


def heston_marginal_density(x, t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0, tol=1e-14):
    m, sd = heston_marginal_stats(t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0)
    cf = lambda u: np.exp(heston_log_cf(u, t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0))
    return fourier_density_from_cf(cf, x, m, sd, tol=tol)


def heston_call(logK, t, r, kappa_v, kth_v, sigma, kth_x, rho, v0, x0, damping: float = 1.5):
    """Call prices ``exp(-r t) E[(e^{X_t} - K)^+]`` by the damped Fourier integral."""
    k = np.atleast_1d(np.asarray(logK, dtype=float))
    m, sd = heston_marginal_stats(t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0)
    al = damping

    def psi(u):
        z = u - (al + 1) * 1j
        lc = heston_log_cf(z, t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0)
        return np.exp(-r * t + lc) / (al * al + al - u * u + 1j * (2 * al + 1) * u)

    U, _ = _cutoff(lambda u: psi(u) * np.exp(-al * m), sd, 1e-16, 1e4 / sd)
    w = max(np.abs(k - m).max(), 1e-300)
    # the damping denominator varies on the scale of ``al``, the transform on ``1/sd``
    h = min(2.0 / sd, 2 * math.pi / w, 0.5 * al)
    u, wt = _gl_panels(U, h)
    vals = psi(u) * np.exp(-1j * u * m)
    integ = (np.exp(-1j * np.outer(k - m, u)) * vals).real @ wt
    return np.exp(-al * k) / math.pi * integ


def black_scholes_call(S0, K, t, r, vol):
    vol = np.asarray(vol, dtype=float)
    sq = vol * math.sqrt(t)
    d1 = (np.log(S0 / K) + (r + 0.5 * vol**2) * t) / sq
    return S0 * stats.norm.cdf(d1) - K * math.exp(-r * t) * stats.norm.cdf(d1 - sq)


def implied_vol(price, S0, K, t, r, lo: float = 1e-4, hi: float = 5.0) -> float:
    """Black-Scholes implied volatility by bracketing; ``nan`` outside the no-arbitrage band."""
    intrinsic = max(S0 - K * math.exp(-r * t), 0.0)
    if not (intrinsic < price < S0):
        return float("nan")
    f = lambda s: float(black_scholes_call(S0, K, t, r, s)) - price
    if f(lo) > 0 or f(hi) < 0:
        return float("nan")
    return optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=200)


def _log_iv_cont(nu, logz):
    """``log I_nu`` continued analytically along the branch fixed by ``logz``."""
    z = np.exp(logz)
    val = special.ive(nu, z)
    with np.errstate(divide="ignore"):
        out = np.log(val) + np.abs(z.real)
    wind = logz.imag - np.angle(z)
    return out + 1j * nu * wind


def heston_joint_density(v, x, t, kappa_v, kth_v, sigma, kth_x, rho, v0, x0, tau_max: float = 12.0,
                         nodes: int = 64, tilt: bool = True):
    """Joint transition density of (variance, log-price) for arrays of transitions.

    Conditions on the terminal variance: the log-price is Gaussian given
    the integrated variance, whose Laplace transform given both variance
    endpoints has a Bessel-function closed form. The remaining Fourier
    integral in the log-price frequency is taken along a line shifted to
    the Gaussian saddle point of each transition, which removes the
    oscillation and keeps relative accuracy far in the tails. Frequencies
    are scaled per transition so a single Gauss-Legendre rule serves all.
    """
    v, x, v0, x0 = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (v, x, v0, x0)))
    shape = v.shape
    v, x, v0, x0 = (a.ravel() for a in (v, x, v0, x0))
    kap, s2 = kappa_v, sigma**2
    nu = 2 * kth_v / s2 - 1.0
    out = np.zeros(v.size)
    ok = (v > 0) & (v0 > 0)
    if not np.any(ok):
        return out.reshape(shape)
    v, x, v0, x0 = v[ok], x[ok], v0[ok], x0[ok]
    mshift = x0 + kth_x * t + rho / sigma * (v - v0 - kth_v * t)
    lam = rho * kap / sigma - 0.5
    # Gaussian proxy for X given V_t, with E[I|v] from the trapezoid rule
    EI = 0.5 * (v0 + v) * t
    center = mshift + lam * EI
    csd = np.sqrt((1 - rho * rho) * EI + lam * lam * s2 * EI * t * t / 6)
    eta = np.zeros_like(csd)
    if tilt:
        eta = (center - x) / csd**2
        # stay well inside the domain where E[exp(q I)] is finite
        smin = 0.25 * (kap * kap + 4 * math.pi**2 / t**2) / (2 * s2)
        a_, b_ = 0.5 * (1 - rho * rho), abs(lam)
        emax = (-b_ + math.sqrt(b_ * b_ + 4 * a_ * smin)) / (2 * a_)
        eta = np.clip(eta, -emax, emax)
    tau, wt = _gl_panels(tau_max, tau_max / max(1, nodes // 16), 16)
    u = tau[None, :] / csd[:, None] + 1j * eta[:, None]
    s = 0.5 * u * u * (1 - rho * rho) - 1j * u * lam
    g = np.sqrt(kap * kap + 2 * s2 * s)
    eg = np.exp(-g * t)
    log1m = np.log1p(-eg)
    coth = (1 + eg) / (1 - eg)
    logg = np.log(g)
    logz = np.log(4 * np.sqrt(v0 * v) / s2)[:, None] + logg - 0.5 * g * t - log1m
    logI = _log_iv_cont(nu, logz)
    logK = (
        math.log(2 / s2) + logg - 0.5 * (g - kap) * t - log1m
        + (0.5 * nu * (np.log(v) + kap * t - np.log(v0)) + kap * (v0 - v) / s2)[:, None]
        - ((v0 + v) / s2)[:, None] * g * coth
        + logI
    )
    integ = np.exp(logK + 1j * u * (mshift - x)[:, None]).real
    out[ok] = (integ @ wt) / (math.pi * csd)
    return out.reshape(shape)
