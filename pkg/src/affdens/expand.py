"""Standardizing transforms, expansion coefficients and pseudo-densities.

A fitted :class:`Expansion` represents

    g_J(y) = w(xi) (1 + sum_{1 <= |alpha| <= J} c_alpha H_alpha(xi)) |det A|,
    xi = A y + shift,

where ``{H_alpha}`` is orthonormal under ``w`` and
``c_alpha = E[H_alpha(xi)]`` is computed from polynomial moments.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .poly import Polynomial, graded_indices
from .weights import (
    BilateralGammaWeight,
    GammaWeight,
    GaussianWeight,
    OrthonormalBasis,
    ProductWeight,
    WeightFamily,
    weight_from_params,
)

log = logging.getLogger(__name__)

MAX_STABLE_ORDER = 12


@dataclass(frozen=True)
class Standardization:
    """Affine change of variables ``xi = A y + shift``."""

    A: np.ndarray
    shift: np.ndarray
    D: float | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "shift", np.atleast_1d(np.asarray(self.shift, dtype=float)))
        if abs(np.linalg.det(A)) == 0.0:
            raise ValueError("standardizing matrix is singular")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def jacobian(self) -> float:
        return float(abs(np.linalg.det(self.A)))

    def forward(self, y):
        y = np.asarray(y, dtype=float)
        if self.dim == 1:
            return self.A[0, 0] * y + self.shift[0]
        return np.atleast_2d(y) @ self.A.T + self.shift

    def inverse(self, xi):
        xi = np.asarray(xi, dtype=float)
        if self.dim == 1:
            return (xi - self.shift[0]) / self.A[0, 0]
        return np.linalg.solve(self.A, (np.atleast_2d(xi) - self.shift).T).T

    def to_dict(self):
        return {"A": self.A.tolist(), "shift": self.shift.tolist(), "D": self.D}


def standardize_1d(mu1: float, mu2: float) -> Standardization:
    """Scale ``y`` so that the standardized mean and variance both equal ``D + 1``.

    ``s = mu1 / (mu2 - mu1^2)`` and ``D = mu1^2 / (mu2 - mu1^2) - 1``.
    """
    var = mu2 - mu1 * mu1
    if not var > 0:
        raise ValueError(f"nonpositive variance {var}")
    if not mu1 > 0:
        raise ValueError("Gamma standardization needs a positive mean")
    return Standardization([[mu1 / var]], [0.0], mu1 * mu1 / var - 1.0)


def standardize_center(mu1: float, mu2: float) -> Standardization:
    """Zero mean, unit variance."""
    var = mu2 - mu1 * mu1
    if not var > 0:
        raise ValueError(f"nonpositive variance {var}")
    sd = math.sqrt(var)
    return Standardization([[1.0 / sd]], [-mu1 / sd])


def standardize_2d(mean, cov) -> Standardization:
    """Demean and block-diagonalize a (positive, real) pair.

    With mean ``(mu1, mu2)`` and covariance ``((a1, b), (b, a2))`` the map
    is ``xi = U2 (U1 u + v1)`` where ``U1 = ((1, 0), (-b/a1, 1))``,
    ``v1 = (0, b mu1/a1 - mu2)`` and ``U2 = diag(mu1/a1, 1/sqrt(a2 - b^2/a1))``.
    The first coordinate then has mean and variance ``D + 1`` with
    ``D = mu1^2/a1 - 1``; the second has mean 0, variance 1 and is
    uncorrelated with the first.
    """
    mu1, mu2 = (float(v) for v in mean)
    cov = np.asarray(cov, dtype=float)
    a1, b, a2 = cov[0, 0], cov[0, 1], cov[1, 1]
    if not a1 > 0:
        raise ValueError("first variance must be positive")
    resid = a2 - b * b / a1
    if not resid > 0:
        raise ValueError("covariance matrix is singular")
    U1 = np.array([[1.0, 0.0], [-b / a1, 1.0]])
    v1 = np.array([0.0, b * mu1 / a1 - mu2])
    U2 = np.diag([mu1 / a1, 1.0 / math.sqrt(resid)])
    return Standardization(U2 @ U1, U2 @ v1, mu1 * mu1 / a1 - 1.0)


def transform_moments(moments: dict, std: Standardization, k: int) -> dict:
    """Moments of ``xi = A y + shift`` up to order ``k`` from raw moments of ``y``."""
    d = std.dim
    out = {}
    for beta in graded_indices(d, k):
        p = Polynomial.monomial(beta).compose_affine(std.A, std.shift)
        out[beta] = p.expectation(moments)
    return out


def expansion_coefficients(moments: dict, basis: OrthonormalBasis, J: int | None = None) -> np.ndarray:
    """``c_alpha = sum_beta coef(H_alpha, beta) mu_beta`` with ``c_0 = 1``.

    ``moments`` are in the standardized variable and keyed by multi-index.
    """
    J = basis.J if J is None else J
    missing = [m for m in basis.monomials if sum(m) <= J and m not in moments]
    if missing:
        raise KeyError(f"missing moment orders {missing[:3]}")
    mu = np.array([moments[m] for m in basis.monomials])
    c = basis.coef @ mu
    c[0] = 1.0
    return c


@dataclass
class Expansion:
    """Fitted pseudo-density (see module docstring)."""

    weight: WeightFamily
    basis: OrthonormalBasis
    std: Standardization
    coeffs: np.ndarray
    J: int
    info: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.std.dim

    def coeff_map(self) -> dict:
        return {a: float(c) for a, c in zip(self.basis.indices, self.coeffs)}

    def ratio_polynomial(self) -> Polynomial:
        """``1 + sum c_alpha H_alpha`` as a polynomial in the standardized variable."""
        col = self.coeffs @ self.basis.coef
        return Polynomial(self.dim, dict(zip(self.basis.monomials, col)))

    def collected(self) -> np.ndarray:
        """Monomial coefficients of the pseudo-likelihood ratio (aligned with ``basis.monomials``)."""
        return self.coeffs @ self.basis.coef

    def ratio(self, xi) -> np.ndarray:
        return self.basis.evaluate(xi) @ self.coeffs

    def density(self, y, floor_mode: bool = False):
        return pseudo_density(self, y, floor_mode)

    def cdf(self, y):
        return pseudo_cdf(self, y)

    def exp_integral(self, a: float) -> float:
        return pseudo_exp_poly_integral(self, a)

    def to_dict(self) -> dict:
        return {
            "weight": self.weight.params(),
            "J": self.J,
            "std": self.std.to_dict(),
            "indices": [list(a) for a in self.basis.indices],
            "coeffs": [float(c) for c in self.coeffs],
            "info": {k: v for k, v in self.info.items() if isinstance(v, (int, float, str, bool, type(None)))},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Expansion":
        w = weight_from_params(d["weight"])
        basis = w.basis(int(d["J"]))
        if [list(a) for a in basis.indices] != d["indices"]:
            raise ValueError("serialized basis ordering does not match")
        s = d["std"]
        std = Standardization(s["A"], s["shift"], s.get("D"))
        return cls(w, basis, std, np.asarray(d["coeffs"], dtype=float), int(d["J"]), dict(d.get("info", {})))

    @classmethod
    def from_json(cls, text: str) -> "Expansion":
        return cls.from_dict(json.loads(text))


def _check_order(J: int):
    if J < 0:
        raise ValueError("expansion order must be nonnegative")
    if J > MAX_STABLE_ORDER:
        warnings.warn(f"expansion order {J} > {MAX_STABLE_ORDER}: coefficients lose precision in double arithmetic",
                      RuntimeWarning, stacklevel=3)


def fit_gamma_expansion(moments: dict, J: int, info: dict | None = None) -> Expansion:
    """Gamma-weight expansion of a positive scalar from its raw moments ``{j: E[Y^j]}``."""
    _check_order(J)
    mom = {(k,): v for k, v in _as_1d(moments).items()}
    std = standardize_1d(mom[(1,)], mom[(2,)])
    w = GammaWeight(std.D)
    basis = w.basis(J)
    xm = transform_moments(mom, std, J)
    c = expansion_coefficients(xm, basis, J)
    return Expansion(w, basis, std, c, J, dict(info or {}, D=std.D))


def fit_centered_expansion(moments: dict, J: int, weight: str = "bilateral", C: float | None = None,
                           info: dict | None = None) -> Expansion:
    """Expansion of a real scalar around a standardized symmetric weight.

    ``weight`` is ``"bilateral"`` (with ``C`` defaulting to the excess
    kurtosis of the target, falling back to the Gaussian weight when that
    is not positive) or ``"gaussian"``.
    """
    _check_order(J)
    mom = {(k,): v for k, v in _as_1d(moments).items()}
    std = standardize_center(mom[(1,)], mom[(2,)])
    xm = transform_moments(mom, std, max(J, 4) if (4,) in mom else J)
    info = dict(info or {})
    if weight == "bilateral":
        if C is None:
            if (4,) not in xm:
                raise KeyError("fourth moment needed to set the kurtosis parameter")
            C = xm[(4,)] - 3.0
        if C > 0:
            w = BilateralGammaWeight(C)
        else:
            log.warning("excess kurtosis %.3g <= 0; using the Gaussian weight", C)
            w = GaussianWeight()
            info["fallback"] = "gaussian"
        info["C"] = C
    elif weight == "gaussian":
        w = GaussianWeight()
    else:
        raise ValueError(f"unknown weight {weight!r}")
    basis = w.basis(J)
    c = expansion_coefficients(xm, basis, J)
    return Expansion(w, basis, std, c, J, info)


def fit_product_expansion(moments: dict, J: int, C: float | None = None, info: dict | None = None) -> Expansion:
    """Gamma x bilateral-Gamma expansion of a (positive, real) pair from raw moments."""
    _check_order(J)
    mean = (moments[(1, 0)], moments[(0, 1)])
    cov = np.array([
        [moments[(2, 0)] - mean[0] ** 2, moments[(1, 1)] - mean[0] * mean[1]],
        [moments[(1, 1)] - mean[0] * mean[1], moments[(0, 2)] - mean[1] ** 2],
    ])
    std = standardize_2d(mean, cov)
    k = max(J, 4) if (0, 4) in moments else J
    xm = transform_moments(moments, std, k)
    info = dict(info or {})
    if C is None:
        C = xm[(0, 4)] - 3.0
    if C > 0:
        second = BilateralGammaWeight(C)
    else:
        log.warning("excess kurtosis %.3g <= 0; using the Gaussian factor weight", C)
        second = GaussianWeight()
        info["fallback"] = "gaussian"
    info["C"], info["D"] = C, std.D
    w = ProductWeight((GammaWeight(std.D), second))
    basis = w.basis(J)
    c = expansion_coefficients(xm, basis, J)
    return Expansion(w, basis, std, c, J, info)


def _as_1d(moments: dict) -> dict:
    out = {}
    for k, v in moments.items():
        kk = k[0] if isinstance(k, tuple) else k
        out[int(kk)] = float(v)
    return out


def pseudo_density(exp: Expansion, y, floor_mode: bool = False):
    """``w(xi) (1 + sum c_alpha H_alpha(xi)) |det A|`` at original-coordinate points.

    Values may be negative; ``floor_mode`` clamps them at zero.
    """
    xi = exp.std.forward(y)
    w = exp.weight.density(xi)
    vals = w * exp.ratio(xi) * exp.std.jacobian
    if exp.dim == 1:
        vals = vals.reshape(np.shape(y))
    if floor_mode:
        vals = np.maximum(vals, 0.0)
    return vals if np.ndim(vals) else float(vals)


def negative_mass(exp: Expansion, lo: float, hi: float) -> float:
    """``int min(g_J, 0)`` over ``[lo, hi]`` (one-dimensional expansions)."""
    f = lambda y: min(pseudo_density(exp, y), 0.0)
    return integrate.quad(f, lo, hi, limit=400)[0]


def pseudo_cdf(exp: Expansion, y):
    """``int_{-inf}^y g_J`` from closed-form partial moments of the weight."""
    if exp.dim != 1:
        raise ValueError("pseudo_cdf is defined for one-dimensional expansions")
    a = exp.std.A[0, 0]
    xi = np.asarray(exp.std.forward(y), dtype=float)
    r = exp.collected()
    tot = sum(rj * np.asarray(exp.weight.partial_moment(xi, j)) for j, rj in enumerate(r) if rj != 0.0)
    if a < 0:
        tot = 1.0 - tot
    tot = np.asarray(tot, dtype=float)
    return tot if tot.ndim else float(tot)


def pseudo_exp_poly_integral(exp: Expansion, a: float) -> float:
    """Approximate ``E[exp(a Y)]`` from closed-form exponential moments of the weight."""
    if exp.dim != 1:
        raise ValueError("one-dimensional expansions only")
    if a == 0:
        # only c_0 survives against the constant
        return 1.0
    s, b = exp.std.A[0, 0], exp.std.shift[0]
    ap = a / s
    r = exp.collected()
    tot = sum(rj * exp.weight.exp_moment(ap, j) for j, rj in enumerate(r) if rj != 0.0)
    return math.exp(-ap * b) * tot


def _support_1d(exp: Expansion, width: float = 40.0):
    # interval in original coordinates covering the weight's effective support
    w = exp.weight
    if isinstance(w, GammaWeight):
        lo_xi, hi_xi = 0.0, w.mean + width * math.sqrt(w.var) + 50.0
    else:
        lo_xi, hi_xi = -width, width
    ends = sorted(exp.std.inverse(np.array([lo_xi, hi_xi])))
    return float(ends[0]), float(ends[1])


def quad_mass(exp: Expansion, n: int = 200) -> float:
    """Total mass of ``g_J`` by adaptive quadrature in one dimension or a tensor Gauss-Legendre rule in two."""
    if exp.dim == 1:
        lo, hi = _support_1d(exp)
        center = float(exp.std.inverse(np.array([exp.weight.mean if isinstance(exp.weight, GammaWeight) else 0.0]))[0])
        pts = [center] if lo < center < hi else None
        val, _ = integrate.quad(lambda y: pseudo_density(exp, y), lo, hi, points=pts, limit=500,
                                epsabs=1e-13, epsrel=1e-12)
        return val
    grid, wts = product_grid(exp, n)
    return float(pseudo_density(exp, grid) @ wts)


def product_grid(exp: Expansion, n: int = 200, width: float = 14.0):
    """Tensor Gauss-Legendre grid in the standardized coordinates, mapped back to the original ones."""
    xg, wg = np.polynomial.legendre.leggauss(n)
    axes = []
    for f in exp.weight.factors:
        if isinstance(f, GammaWeight):
            lo = max(0.0, f.mean - width * math.sqrt(f.var))
            hi = f.mean + width * math.sqrt(f.var) + 10.0
        else:
            lo, hi = -width * 1.5, width * 1.5
        axes.append((0.5 * (hi + lo) + 0.5 * (hi - lo) * xg, 0.5 * (hi - lo) * wg))
    X1, X2 = np.meshgrid(axes[0][0], axes[1][0], indexing="ij")
    W = np.outer(axes[0][1], axes[1][1]).ravel()
    xi = np.column_stack([X1.ravel(), X2.ravel()])
    y = exp.std.inverse(xi)
    return y, W / exp.std.jacobian
