"""Auxiliary densities, their moments and orthonormal polynomial bases."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import mpmath as mp
import numpy as np
from scipy import integrate, special, stats

from .poly import Polynomial, graded_indices


class DegenerateWeightError(ValueError):
    """Raised when the moment (Hankel) structure of a weight is numerically singular."""


class WeightFamily:
    """Interface shared by all auxiliary densities."""

    dim: int = 1

    def density(self, x):
        raise NotImplementedError

    def moment(self, n) -> float:
        raise NotImplementedError

    def moment_mp(self, n: int):
        return mp.mpf(self.moment(n))

    def basis(self, J: int) -> "OrthonormalBasis":
        return gram_schmidt(self, J)

    def partial_moment(self, K, n: int):
        raise NotImplementedError(f"{type(self).__name__} has no partial moments")

    def exp_moment(self, a: float, n: int) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no closed-form exponential moments")

    def params(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class GammaWeight(WeightFamily):
    """Gamma(1+D, 1) density ``xi^D e^{-xi} / Gamma(1+D)`` on the half line."""

    D: float

    def __post_init__(self):
        if not self.D > -1:
            raise ValueError(f"GammaWeight needs D > -1, got {self.D}")

    def density(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            logd = special.xlogy(self.D, x) - x - special.gammaln(1 + self.D)
            out = np.where(x > 0, np.exp(logd), 0.0)
        if self.D == 0:
            out = np.where(x == 0, 1.0, out)
        elif self.D < 0:
            out = np.where(x == 0, np.inf, out)
        return out if out.ndim else float(out)

    def moment(self, n) -> float:
        n = int(np.ravel([n])[0])
        return float(np.prod(self.D + np.arange(1, n + 1)))

    def moment_mp(self, n):
        D = mp.mpf(self.D)
        return mp.fprod(D + i for i in range(1, int(n) + 1))

    def basis(self, J: int) -> "OrthonormalBasis":
        return laguerre_basis(self.D, J)

    def partial_moment(self, K, n: int):
        """``int_0^K xi^n w(xi) dxi`` through the regularized lower incomplete gamma function."""
        K = np.asarray(K, dtype=float)
        out = self.moment(n) * special.gammainc(1 + self.D + n, np.maximum(K, 0.0))
        return out if out.ndim else float(out)

    def exp_moment(self, a: float, n: int) -> float:
        """``E_w[exp(a xi) xi^n]``, finite for ``a < 1``."""
        if a >= 1:
            raise ValueError(f"exponential moment of the Gamma weight diverges for a={a} >= 1")
        return self.moment(n) * (1.0 - a) ** (-(1.0 + self.D + n))

    @property
    def mean(self) -> float:
        return 1.0 + self.D

    @property
    def var(self) -> float:
        return 1.0 + self.D

    def params(self):
        return {"family": "gamma", "D": self.D}


def _log_kv_small(nu: float, z):
    """``log K_nu(z)`` for small ``z`` where ``kve`` overflows (leading terms of the ascending series)."""
    q = -0.25 * z * z
    term = np.ones_like(z)
    tot = np.ones_like(z)
    for k in range(1, min(5, int(math.ceil(nu)))):
        term = term * q / (k * (nu - k))
        tot = tot + term
    return special.gammaln(nu) - math.log(2) + nu * np.log(2 / z) + np.log(tot)


@dataclass(frozen=True)
class BilateralGammaWeight(WeightFamily):
    """Standardized symmetric bilateral Gamma density with excess kurtosis ``C``.

    Equivalent to the difference of two independent Gamma variables with
    shape ``3/C`` and scale ``sqrt(C/6)``; mean 0 and variance 1.
    """

    C: float

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"BilateralGammaWeight needs C > 0, got {self.C}")

    @property
    def shape(self) -> float:
        return 3.0 / self.C

    @property
    def scale(self) -> float:
        return math.sqrt(self.C / 6.0)

    def _log_prefactor(self) -> float:
        C = self.C
        return (
            3 * (C - 2) / (4 * C) * math.log(2)
            + (C + 6) / (4 * C) * math.log(3)
            - (C + 6) / (4 * C) * math.log(C)
            - 0.5 * math.log(math.pi)
            - special.gammaln(3 / C)
        )

    def density(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        nu = 3.0 / self.C - 0.5
        c = 1.0 / self.scale
        lp = self._log_prefactor()
        with np.errstate(divide="ignore", invalid="ignore"):
            z = c * x
            logk = np.log(special.kve(nu, z)) - z
            bad = ~np.isfinite(logk) & (z > 0)
            if np.any(bad):
                logk = np.where(bad, _log_kv_small(nu, np.where(bad, z, 1.0)), logk)
            out = np.exp(lp + nu * np.log(x) + logk)
        if nu > 0:
            at0 = math.exp(lp + special.gammaln(nu) - math.log(2) + nu * math.log(2 / c))
        else:
            at0 = np.inf
        out = np.where(x == 0, at0, out)
        return out if out.ndim else float(out)

    def char_fn(self, u):
        """``E[exp(i u xi)] = (1 + C u^2 / 6)^(-3/C)``."""
        u = np.asarray(u, dtype=float)
        return (1.0 + self.C * u**2 / 6.0) ** (-3.0 / self.C)

    def mgf(self, a):
        """``E[exp(a xi)] = (1 - C a^2 / 6)^(-3/C)`` for ``|a| < sqrt(6/C)``."""
        a = np.asarray(a, dtype=float)
        return (1.0 - self.C * a**2 / 6.0) ** (-3.0 / self.C)

    def cumulant(self, j: int) -> float:
        if j % 2:
            return 0.0
        return 2.0 * self.shape * self.scale**j * math.factorial(j - 1)

    def moment(self, n) -> float:
        n = int(np.ravel([n])[0])
        return float(_bilateral_moments(self.C, n)[n])

    def moment_mp(self, n):
        return _bilateral_moments_mp(self.C, int(n))[int(n)]

    def basis(self, J: int) -> "OrthonormalBasis":
        if J <= 4:
            return bilateral_basis_closed(self.C, J)
        return _cached_gs(self, J)

    def partial_moment(self, K, n: int):
        return bilateral_partial_moment(K, n, self.C)

    def params(self):
        return {"family": "bilateral_gamma", "C": self.C}


@functools.lru_cache(maxsize=256)
def _bilateral_moments(C: float, n: int) -> tuple:
    w = BilateralGammaWeight(C)
    kap = [0.0] + [w.cumulant(j) for j in range(1, n + 1)]
    m = [1.0]
    for k in range(1, n + 1):
        m.append(sum(math.comb(k - 1, i - 1) * kap[i] * m[k - i] for i in range(1, k + 1)))
    return tuple(m)


@functools.lru_cache(maxsize=256)
def _bilateral_moments_mp(C: float, n: int) -> tuple:
    Cm = mp.mpf(C)
    k, s2 = 3 / Cm, Cm / 6
    kap = [mp.mpf(0)] * (n + 1)
    for j in range(2, n + 1, 2):
        kap[j] = 2 * k * s2 ** (j // 2) * mp.factorial(j - 1)
    m = [mp.mpf(1)]
    for q in range(1, n + 1):
        m.append(mp.fsum(mp.binomial(q - 1, i - 1) * kap[i] * m[q - i] for i in range(1, q + 1)))
    return tuple(m)


@dataclass(frozen=True)
class GaussianWeight(WeightFamily):
    """Normal density with given mean and variance."""

    mean: float = 0.0
    var: float = 1.0

    def __post_init__(self):
        if not self.var > 0:
            raise ValueError(f"GaussianWeight needs positive variance, got {self.var}")

    def density(self, x):
        return stats.norm.pdf(x, self.mean, math.sqrt(self.var))

    def _std_moments(self, n):
        # E[Z^k] for the standard normal
        return [0.0 if k % 2 else float(special.factorial2(k - 1)) if k else 1.0 for k in range(n + 1)]

    def moment(self, n) -> float:
        n = int(np.ravel([n])[0])
        sd = math.sqrt(self.var)
        z = self._std_moments(n)
        return sum(math.comb(n, j) * self.mean ** (n - j) * sd**j * z[j] for j in range(n + 1))

    def moment_mp(self, n):
        n = int(n)
        mu, sd = mp.mpf(self.mean), mp.sqrt(mp.mpf(self.var))
        z = [mp.mpf(0) if k % 2 else (mp.fac2(k - 1) if k else mp.mpf(1)) for k in range(n + 1)]
        return mp.fsum(mp.binomial(n, j) * mu ** (n - j) * sd**j * z[j] for j in range(n + 1))

    def basis(self, J: int) -> "OrthonormalBasis":
        return hermite_basis(J, self.mean, self.var)

    def partial_moment(self, K, n: int):
        K = np.asarray(K, dtype=float)
        sd = math.sqrt(self.var)
        z = (K - self.mean) / sd
        pdf, cdf = stats.norm.pdf(z), stats.norm.cdf(z)
        M = [cdf, -pdf]
        for k in range(2, n + 1):
            M.append(-(z ** (k - 1)) * pdf + (k - 1) * M[k - 2])
        out = sum(math.comb(n, j) * self.mean ** (n - j) * sd**j * M[j] for j in range(n + 1))
        out = np.asarray(out, dtype=float)
        return out if out.ndim else float(out)

    def exp_moment(self, a: float, n: int) -> float:
        shifted = GaussianWeight(self.mean + a * self.var, self.var)
        return math.exp(a * self.mean + 0.5 * a * a * self.var) * shifted.moment(n)

    def params(self):
        return {"family": "gaussian", "mean": self.mean, "var": self.var}


@dataclass(frozen=True)
class ProductWeight(WeightFamily):
    """Product of one-dimensional weights."""

    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))

    @property
    def dim(self) -> int:
        return len(self.factors)

    def density(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.ones(x.shape[0])
        for i, f in enumerate(self.factors):
            out = out * f.density(x[:, i])
        return out

    def moment(self, n) -> float:
        return float(np.prod([f.moment(k) for f, k in zip(self.factors, n)]))

    def basis(self, J: int) -> "OrthonormalBasis":
        return product_basis([f.basis(J) for f in self.factors], J)

    def params(self):
        return {"family": "product", "factors": [f.params() for f in self.factors]}


def weight_from_params(d: dict) -> WeightFamily:
    fam = d["family"]
    if fam == "gamma":
        return GammaWeight(d["D"])
    if fam == "bilateral_gamma":
        return BilateralGammaWeight(d["C"])
    if fam == "gaussian":
        return GaussianWeight(d["mean"], d["var"])
    if fam == "product":
        return ProductWeight(tuple(weight_from_params(f) for f in d["factors"]))
    raise ValueError(f"unknown weight family {fam!r}")


def weight_density(w: WeightFamily, x):
    return w.density(x)


def weight_moment(w: WeightFamily, n):
    return w.moment(n)


@dataclass(frozen=True)
class OrthonormalBasis:
    """Orthonormal polynomials ``H_alpha`` indexed by multi-indices up to order ``J``.

    ``coef[i, j]`` is the coefficient of monomial ``monomials[j]`` in
    element ``i``. ``norms`` holds the L2 norm of the monic orthogonal
    polynomial of each degree (one-dimensional bases only).
    """

    weight: WeightFamily
    J: int
    indices: tuple
    coef: np.ndarray
    monomials: tuple
    norms: np.ndarray = field(default=None)

    @property
    def dim(self) -> int:
        return len(self.indices[0])

    @property
    def elements(self) -> list:
        return [self.element(i) for i in range(len(self.indices))]

    def element(self, i: int) -> Polynomial:
        return Polynomial(self.dim, {m: c for m, c in zip(self.monomials, self.coef[i])})

    def __getitem__(self, alpha) -> Polynomial:
        if isinstance(alpha, (int, np.integer)):
            alpha = (int(alpha),)
        return self.element(self.indices.index(tuple(alpha)))

    def __len__(self):
        return len(self.indices)

    def monomial_values(self, x) -> np.ndarray:
        """Values of every monomial at ``x`` with shape ``(N, n_monomials)``."""
        x = np.asarray(x, dtype=float)
        if self.dim == 1:
            x = x.reshape(-1, 1)
        else:
            x = np.atleast_2d(x)
        pows = x[:, :, None] ** np.arange(self.J + 1)
        out = np.ones((x.shape[0], len(self.monomials)))
        for j, m in enumerate(self.monomials):
            for i, e in enumerate(m):
                if e:
                    out[:, j] *= pows[:, i, e]
        return out

    def evaluate(self, x) -> np.ndarray:
        """Matrix of ``H_alpha(x)`` with shape ``(N, len(self))``."""
        if self.dim == 1:
            # Horner per element is better conditioned than the power table
            x = np.asarray(x, dtype=float).reshape(-1)
            out = np.empty((x.size, len(self.indices)))
            for i in range(len(self.indices)):
                acc = np.full(x.size, self.coef[i, -1])
                for j in range(self.J - 1, -1, -1):
                    acc = acc * x + self.coef[i, j]
                out[:, i] = acc
            return out
        return self.monomial_values(x) @ self.coef.T


def _embed(p_coefs, dim: int, axis: int, J: int):
    return {tuple(k if i == axis else 0 for i in range(dim)): c for k, c in enumerate(p_coefs) if c != 0.0}


def _basis_1d(weight, J, coef, norms=None):
    return OrthonormalBasis(
        weight=weight,
        J=J,
        indices=tuple((n,) for n in range(J + 1)),
        coef=np.asarray(coef, dtype=float),
        monomials=tuple((n,) for n in range(J + 1)),
        norms=None if norms is None else np.asarray(norms, dtype=float),
    )


def laguerre_coefficients(D: float, n: int) -> np.ndarray:
    """Ascending monomial coefficients of the generalized Laguerre polynomial ``L_n^(D)``."""
    out = np.zeros(n + 1)
    for k in range(n + 1):
        num = np.prod(D + np.arange(k + 1, n + 1))
        out[k] = (-1) ** k * num / (math.factorial(n - k) * math.factorial(k))
    return out


def laguerre_norms(D: float, J: int) -> np.ndarray:
    """Norms of ``L_n^(D)`` under the Gamma(1+D) weight, ``sqrt(prod_i (i+D) / n!)``."""
    return np.array([math.sqrt(np.prod(D + np.arange(1, n + 1)) / math.factorial(n)) for n in range(J + 1)])


def laguerre_basis(D: float, J: int) -> OrthonormalBasis:
    """Closed-form orthonormal basis of the Gamma weight (positive leading coefficients)."""
    ho = laguerre_norms(D, J)
    coef = np.zeros((J + 1, J + 1))
    for n in range(J + 1):
        coef[n, : n + 1] = (-1) ** n * laguerre_coefficients(D, n) / ho[n]
    monic = np.array([math.factorial(n) * ho[n] for n in range(J + 1)])
    return _basis_1d(GammaWeight(D), J, coef, monic)


def bilateral_unnormalized(C: float) -> list:
    """Closed-form orthogonal polynomials of the bilateral Gamma weight through order 4."""
    k4 = 2 * (5 * C**2 + 21 * C + 18) / (3 * (C + 2))
    return [
        np.array([1.0, 0, 0, 0, 0]),
        np.array([0, 1.0, 0, 0, 0]),
        np.array([-1.0, 0, 1, 0, 0]),
        np.array([0, -(C + 3), 0, 1, 0]),
        np.array([k4 - C - 3, 0, -k4, 0, 1]),
    ]


def bilateral_norms(C: float) -> np.ndarray:
    return np.array(
        [
            1.0,
            1.0,
            math.sqrt(C + 2),
            math.sqrt(7 * C**2 / 3 + 9 * C + 6),
            math.sqrt(2 * (55 * C**4 + 363 * C**3 + 822 * C**2 + 756 * C + 216) / (9 * (C + 2))),
        ]
    )


def bilateral_basis_closed(C: float, J: int = 4) -> OrthonormalBasis:
    if J > 4:
        raise ValueError("closed-form bilateral Gamma basis is available through order 4")
    raw, ho = bilateral_unnormalized(C), bilateral_norms(C)
    coef = np.array([raw[n][: J + 1] / ho[n] for n in range(J + 1)])
    return _basis_1d(BilateralGammaWeight(C), J, coef, ho[: J + 1])


def laguerre_matrix(D, J: int) -> np.ndarray:
    """Orthonormal Gamma-weight coefficients for an array of shapes ``D``; shape ``D.shape + (J+1, J+1)``."""
    D = np.asarray(D, dtype=float)
    out = np.zeros(D.shape + (J + 1, J + 1))
    for n in range(J + 1):
        # prod_{i=1}^n (D+i) / n! is the squared norm of L_n
        norm2 = np.ones_like(D)
        for i in range(1, n + 1):
            norm2 = norm2 * (D + i) / i
        sign = (-1) ** n / np.sqrt(norm2)
        num = np.ones_like(D)
        for k in range(n, -1, -1):
            out[..., n, k] = sign * (-1) ** k * num / (math.factorial(n - k) * math.factorial(k))
            num = num * (D + k)
    return out


def bilateral_matrix(C, J: int) -> np.ndarray:
    """Orthonormal bilateral-Gamma coefficients for an array of ``C`` (``J <= 4``)."""
    if J > 4:
        raise ValueError("closed-form bilateral Gamma basis is available through order 4")
    C = np.asarray(C, dtype=float)
    k4 = 2 * (5 * C**2 + 21 * C + 18) / (3 * (C + 2))
    out = np.zeros(C.shape + (5, 5))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 2, 0], out[..., 2, 2] = -1.0, 1.0
    out[..., 3, 1], out[..., 3, 3] = -(C + 3), 1.0
    out[..., 4, 0], out[..., 4, 2], out[..., 4, 4] = k4 - C - 3, -k4, 1.0
    ho = np.stack([
        np.ones_like(C), np.ones_like(C), np.sqrt(C + 2), np.sqrt(7 * C**2 / 3 + 9 * C + 6),
        np.sqrt(2 * (55 * C**4 + 363 * C**3 + 822 * C**2 + 756 * C + 216) / (9 * (C + 2))),
    ], axis=-1)
    out = out / ho[..., :, None]
    return out[..., : J + 1, : J + 1]


def hermite_basis(J: int, mean: float = 0.0, var: float = 1.0) -> OrthonormalBasis:
    """Normalized probabilists' Hermite polynomials in ``(x - mean)/sqrt(var)``."""
    he = [np.array([1.0]), np.array([0.0, 1.0])]
    for n in range(1, J):
        nxt = np.zeros(n + 2)
        nxt[1:] += he[n]
        nxt[: n] -= n * he[n - 1]
        he.append(nxt)
    sd = math.sqrt(var)
    coef = np.zeros((J + 1, J + 1))
    for n in range(J + 1):
        p = Polynomial.from_coeffs_1d(he[n] / math.sqrt(math.factorial(n)))
        q = p.compose_affine([[1 / sd]], [-mean / sd])
        for (k,), c in q.terms.items():
            coef[n, k] = c
    monic = np.array([math.sqrt(math.factorial(n)) * sd**n for n in range(J + 1)])
    return _basis_1d(GaussianWeight(mean, var), J, coef, monic)


def gram_schmidt(w: WeightFamily, J: int, dps: int = 60) -> OrthonormalBasis:
    """Orthonormalize the monomials under ``w`` using its closed-form moments.

    Inner products are ``<x^i, x^j> = lambda_{i+j}``. The modified process
    is run twice per element (re-orthogonalization) in ``dps``-digit
    arithmetic, so Hankel ill-conditioning does not leak into the
    double-precision output. Leading coefficients are positive.

    Parameters
    ----------
    w : WeightFamily
        One-dimensional weight, or a :class:`ProductWeight` (handled by
        orthonormalizing each factor and forming tensor products).
    J : int
        Maximal degree.
    """
    if isinstance(w, ProductWeight):
        return product_basis([gram_schmidt(f, J, dps) for f in w.factors], J)
    if J < 0:
        raise ValueError("J must be nonnegative")
    with mp.workdps(dps):
        lam = [w.moment_mp(n) for n in range(2 * J + 1)]

        def ip(p, q):
            return mp.fsum(p[i] * q[j] * lam[i + j] for i in range(J + 1) if p[i] for j in range(J + 1) if q[j])

        hs, monic_norms = [], []
        for n in range(J + 1):
            v = [mp.mpf(0)] * (J + 1)
            v[n] = mp.mpf(1)
            scale2 = lam[2 * n]
            for _ in range(2):
                for h in hs:
                    r = ip(v, h)
                    v = [vi - r * hi for vi, hi in zip(v, h)]
            nn = ip(v, v)
            if not nn > mp.mpf(10) ** (-dps + 10) * abs(scale2):
                raise DegenerateWeightError(f"moment matrix singular at degree {n}")
            nrm = mp.sqrt(nn)
            monic_norms.append(float(nrm))
            hs.append([vi / nrm for vi in v])
        coef = np.array([[float(c) for c in h] for h in hs])
    return _basis_1d(w, J, coef, monic_norms)


@functools.lru_cache(maxsize=128)
def _cached_gs(w: WeightFamily, J: int) -> OrthonormalBasis:
    return gram_schmidt(w, J)


def product_basis(factor_bases: list, J: int) -> OrthonormalBasis:
    """Tensor-product basis ``H_alpha = prod_i H^i_{alpha_i}`` with ``|alpha| <= J``."""
    d = len(factor_bases)
    for fb in factor_bases:
        if fb.dim != 1:
            raise ValueError("product_basis expects one-dimensional factor bases")
        if fb.J < J:
            raise ValueError(f"factor basis order {fb.J} below requested J={J}")
    indices = tuple(graded_indices(d, J))
    pos = {m: j for j, m in enumerate(indices)}
    coef = np.zeros((len(indices), len(indices)))
    for i, alpha in enumerate(indices):
        p = Polynomial.constant(d, 1.0)
        for ax, (fb, a) in enumerate(zip(factor_bases, alpha)):
            p = p * Polynomial(d, _embed(fb.coef[a], d, ax, J))
        for m, c in p.terms.items():
            coef[i, pos[m]] = c
    weight = ProductWeight(tuple(fb.weight for fb in factor_bases))
    return OrthonormalBasis(weight=weight, J=J, indices=indices, coef=coef, monomials=indices)


def _quad_tail(f, a: float) -> float:
    """``int_a^inf f`` for an exponentially decaying integrand."""
    s = 0.0
    lo = a
    for width in (1.0, 4.0, 16.0, 64.0):
        val, _ = integrate.quad(f, lo, lo + width, epsabs=1e-15, epsrel=1e-13, limit=200)
        s += val
        lo += width
    val, _ = integrate.quad(f, lo, np.inf, epsabs=1e-15, epsrel=1e-12, limit=200)
    return s + val


def bilateral_partial_moment(K, n: int, C: float):
    """Lower partial moment ``int_{-inf}^K xi^n gamma_b(xi; C) dxi``.

    Computed by adaptive quadrature of the upper tail on ``[|K|, inf)``
    and the reflection symmetry of the density.
    """
    w = BilateralGammaWeight(C)
    Ks = np.atleast_1d(np.asarray(K, dtype=float))
    full = w.moment(n)
    out = np.empty_like(Ks)
    for i, k in enumerate(Ks):
        if np.isposinf(k):
            out[i] = full
            continue
        if np.isneginf(k):
            out[i] = 0.0
            continue
        a = abs(k)
        if a == 0.0:
            up = _zero_upper(w, n)
        else:
            up = _quad_tail(lambda t: t**n * w.density(t), a)
        out[i] = (-1) ** n * up if k <= 0 else full - up
    return out if np.ndim(K) else float(out[0])


def _zero_upper(w: BilateralGammaWeight, n: int) -> float:
    # int_0^inf t^n gamma_b: half the even moment, or half the absolute moment for odd n
    if n % 2 == 0:
        return 0.5 * w.moment(n)
    f = lambda t: t**n * w.density(t)
    head, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=400)
    return head + _quad_tail(f, 1.0)
