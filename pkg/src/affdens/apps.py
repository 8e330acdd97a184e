"""Application pipelines: jump-augmented square-root densities, stochastic
variance densities, option prices and credit-portfolio losses."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from . import oracle
from .affine import (
    bajd_model,
    check_assumption2,
    check_density_existence,
    check_integrated_existence,
    conditional_moments,
    exp_moment_check,
    heston_model,
    integrated_model,
)
from .expand import (
    Expansion,
    Standardization,
    fit_centered_expansion,
    fit_gamma_expansion,
    fit_product_expansion,
    pseudo_cdf,
    pseudo_density,
)


class GateError(ValueError):
    """A regularity condition required by a pipeline is violated."""


@dataclass(frozen=True)
class BajdParams:
    """Square-root intensity with exponential jumps: ``kth`` is the drift constant, ``l`` the jump rate, ``nu`` the mean jump."""

    kth: float
    kappa: float
    sigma: float
    l: float
    nu: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.l < 0 or self.nu < 0:
            raise ValueError("jump rate and mean must be nonnegative")
        if self.kth < 0:
            raise ValueError("kth must be nonnegative")

    def model(self):
        return bajd_model(self.kth, self.kappa, self.sigma, self.l, self.nu)

    def as_tuple(self):
        return (self.kth, self.kappa, self.sigma, self.l, self.nu)

    @property
    def stationary_mean(self) -> float:
        return (self.kth + self.l * self.nu) / self.kappa

    def feller_ok(self) -> bool:
        return 2 * self.kth > self.sigma**2


@dataclass(frozen=True)
class HestonParams:
    kappa_v: float
    kth_v: float
    sigma: float
    kth_x: float
    rho: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        if self.kth_v < 0:
            raise ValueError("kth_v must be nonnegative")

    def model(self):
        return heston_model(self.kappa_v, self.kth_v, self.sigma, self.kth_x, self.rho)

    def as_tuple(self):
        return (self.kappa_v, self.kth_v, self.sigma, self.kth_x, self.rho)

    def as_dict(self):
        return dict(kappa_v=self.kappa_v, kth_v=self.kth_v, sigma=self.sigma, kth_x=self.kth_x, rho=self.rho)

    def feller_ok(self) -> bool:
        return 2 * self.kth_v > self.sigma**2


def bajd_expansion(p: BajdParams, y0: float, dt: float, J: int = 4, strict: bool = True) -> Expansion:
    """Gamma-weight expansion of the transition density ``Y_dt | Y_0 = y0``.

    Raises :class:`GateError` if ``2 kth > sigma^2`` fails, and with
    ``strict`` also when ``ceil(D/2) < 2 kth/sigma^2 - 1`` fails.
    """
    model = p.model()
    rep = check_density_existence(model)
    if not rep.density_exists:
        raise GateError(f"2κθ>σ² violated: 2*{p.kth:g} <= {p.sigma:g}^2")
    mom = conditional_moments(model, [y0], dt, J)
    exp = fit_gamma_expansion({j: mom[(j,)] for j in range(J + 1)}, J)
    D = exp.std.D
    a2 = check_assumption2(D, rep.smoothness_p)
    scale = exp.std.A[0, 0]
    em = exp_moment_check(model, scale, 0.0, dt)
    exp.info.update(smoothness_p=rep.smoothness_p, assumption2_ok=a2, exp_moment=em.status,
                    exp_moment_reason=em.reason)
    if strict and not a2:
        raise GateError(f"ceil(D/2) < 2κθ/σ² - 1 violated: ceil({D:.4g}/2) = {math.ceil(D / 2)} >= {rep.bound:.4g}")
    return exp


def heston_expansion(p: HestonParams, x0: float, v0: float, dt: float, J: int = 4, C: float | None = None) -> Expansion:
    """Gamma x bilateral-Gamma expansion of the joint law of ``(V_dt, X_dt)``."""
    rep = check_density_existence(p.model())
    if not rep.density_exists:
        raise GateError("2κθ_V>σ² violated" if rep.smoothness_p is None else "diffusion rank condition violated")
    k = max(J, 4)
    # moments of the log-price increment avoid cancellation against a large x0
    mom = conditional_moments(p.model(), [v0, 0.0], dt, k)
    exp = fit_product_expansion(mom, J, C=C)
    exp.info["smoothness_p"] = rep.smoothness_p
    return _translate(exp, np.array([0.0, x0]))


def _translate(exp: Expansion, offset) -> Expansion:
    """Re-express an expansion fitted to ``y - offset`` in the coordinate ``y``."""
    std = exp.std
    shift = std.shift - std.A @ np.atleast_1d(offset)
    exp.std = Standardization(std.A, shift, std.D)
    return exp


def heston_marginal_moments(p: HestonParams, x0: float, v0: float, dt: float, k: int) -> dict:
    """Raw moments of ``X_dt - x0``."""
    mom = conditional_moments(p.model(), [v0, 0.0], dt, k)
    return {j: mom[(0, j)] for j in range(k + 1)}


def heston_marginal_expansion(p: HestonParams, x0: float, v0: float, dt: float, J: int = 4,
                              C: float | None = None) -> Expansion:
    """Bilateral-Gamma expansion of the log-price marginal ``X_dt``; ``C`` defaults to its excess kurtosis."""
    mom = heston_marginal_moments(p, x0, v0, dt, max(J, 4))
    return _translate(fit_centered_expansion(mom, J, weight="bilateral", C=C), [x0])


@dataclass
class PriceResult:
    logK: np.ndarray
    price: np.ndarray
    HA: np.ndarray
    HB: np.ndarray
    diagnostics: list = field(default_factory=list)


def price_call(p: HestonParams, x0: float, v0: float, dt: float, logK, r: float, J: int = 4,
               exp: Expansion | None = None) -> PriceResult:
    """European call ``exp(-r dt) (HA - K HB)`` under the marginal expansion.

    ``HB = 1 - Q(X <= log K)`` uses closed-form partial moments of the
    weight; ``HA = int_{log K}^inf e^x g(x) dx`` is integrated adaptively.
    """
    exp = exp or heston_marginal_expansion(p, x0, v0, dt, J)
    k = np.atleast_1d(np.asarray(logK, dtype=float))
    sd = 1.0 / exp.std.A[0, 0]
    mu = -exp.std.shift[0] * sd
    C = exp.info.get("C")
    diags = []
    if C is not None and C > 0 and sd * math.sqrt(C / 6.0) >= 1.0:
        diags.append("exp(x) g(x) is not integrable: weight tail too heavy")
    hi = mu + 40.0 * sd
    HB = 1.0 - np.asarray(pseudo_cdf(exp, k), dtype=float)
    HA = np.empty_like(k)
    f = lambda x: math.exp(x) * pseudo_density(exp, x)
    for i, kk in enumerate(k):
        pts = [mu] if kk < mu < hi else None
        HA[i] = integrate.quad(f, kk, hi, points=pts, limit=400, epsabs=0.0, epsrel=1e-12)[0]
    price = math.exp(-r * dt) * (HA - np.exp(k) * HB)
    if np.any(price < 0):
        diags.append("negative price from pseudo-density")
    order = np.argsort(k)
    rise = np.diff(price[order])
    if np.any(rise > 1e-8):
        kk = k[order][1:][rise > 1e-8]
        diags.append(f"price increases with strike on log K in [{kk.min():.4g}, {kk.max():.4g}]")
    return PriceResult(k, price, HA, HB, diags)


def integrated_bajd_expansion(p: BajdParams, y0: float, horizon: float, J: int = 4) -> Expansion:
    """Gamma-weight expansion of ``Z = int_0^horizon Y ds``.

    Gated on ``kth > sigma^2`` (existence of a density for ``Z``); the
    square-integrability check ``ceil(D/2) <= p`` is recorded in ``info``.
    """
    base = p.model()
    rep = check_integrated_existence(base)
    if not rep.density_exists:
        raise GateError(f"κθ>σ² violated: {p.kth:g} <= {p.sigma:g}^2")
    mom = conditional_moments(integrated_model(base), [y0, 0.0], horizon, J)
    exp = fit_gamma_expansion({j: mom[(0, j)] for j in range(J + 1)}, J)
    exp.info.update(smoothness_p=rep.smoothness_p, assumption2_ok=check_assumption2(exp.std.D, rep.smoothness_p))
    return exp


def asb_recursion(qs) -> np.ndarray:
    """Distribution of the number of defaults among conditionally independent obligors.

    ``P^{(m+1)}(k) = q_{m+1} P^{(m)}(k-1) + (1 - q_{m+1}) P^{(m)}(k)``.
    Each ``q`` may be an array (evaluated at many conditioning values);
    the result then has the pmf along axis 0.
    """
    qs = [np.asarray(q, dtype=float) for q in qs]
    for q in qs:
        if np.any((q < 0) | (q > 1)):
            raise ValueError("conditional default probabilities must lie in [0, 1]")
    shape = np.broadcast_shapes(*(q.shape for q in qs)) if qs else ()
    P = np.zeros((len(qs) + 1,) + shape)
    P[0] = 1.0
    for m, q in enumerate(qs):
        new = (1.0 - q) * P
        new[1 : m + 2] += q * P[: m + 1]
        P = new
    return P


@dataclass(frozen=True)
class Obligor:
    params: BajdParams
    x0: float
    loading: float


@dataclass(frozen=True)
class CreditPortfolio:
    """Obligor intensities ``X_i + a_i Y`` driven by independent square-root jump processes."""

    obligors: tuple
    common: BajdParams
    y0: float

    def __post_init__(self):
        object.__setattr__(self, "obligors", tuple(self.obligors))
        a = np.array([o.loading for o in self.obligors])
        if np.any(a < 0):
            raise ValueError("loadings must be nonnegative")
        if not math.isclose(a.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError(f"loadings must sum to 1, got {a.sum()}")


@dataclass
class LossResult:
    pmf: np.ndarray
    negative_mass: float
    survival: np.ndarray
    expansion: Expansion


def survival_factors(portfolio: CreditPortfolio, horizon: float) -> np.ndarray:
    """``E[exp(-int X_i ds)]`` for every obligor from the real Riccati flow."""
    return np.array([
        float(oracle.integrated_mgf(o.params.model(), [-1.0], horizon, [o.x0])[0]) for o in portfolio.obligors
    ])


def conditional_default_probs(portfolio: CreditPortfolio, survival: np.ndarray, z) -> list:
    z = np.asarray(z, dtype=float)
    return [np.clip(1.0 - s * np.exp(-o.loading * z), 0.0, 1.0) for o, s in zip(portfolio.obligors, survival)]


def portfolio_loss(portfolio: CreditPortfolio, t: float, T: float, J: int = 4, nodes: int = 96) -> LossResult:
    """Unconditional distribution of the number of defaults in ``(t, T]``.

    Integrates the conditional recursion against the expansion of the
    integrated common factor with a generalized Gauss-Laguerre rule
    matched to the Gamma weight.
    """
    horizon = T - t
    if horizon <= 0:
        raise ValueError("T must exceed t")
    exp = integrated_bajd_expansion(portfolio.common, portfolio.y0, horizon, J)
    D, s = exp.std.D, exp.std.A[0, 0]
    xi, wts = special.roots_genlaguerre(nodes, D)
    wts = wts / wts.sum()
    ratio = exp.ratio(xi)
    surv = survival_factors(portfolio, horizon)
    P = asb_recursion(conditional_default_probs(portfolio, surv, xi / s))
    pmf = P @ (wts * ratio)
    # negative part of the pseudo-density on a fine grid
    grid = np.linspace(0.0, exp.weight.mean + 40 * math.sqrt(exp.weight.var), 4001)
    g = exp.weight.density(grid) * exp.ratio(grid)
    neg = float(integrate.trapezoid(np.minimum(g, 0.0), grid))
    if -neg > 1e-3:
        warnings.warn(f"pseudo-density carries negative mass {neg:.3g}", RuntimeWarning, stacklevel=2)
    return LossResult(pmf, neg, surv, exp)
