"""Likelihoods, estimation, posterior sampling and simulation for the
jump-augmented square-root model and the stochastic variance model.

Per-transition expansions are computed in batch: all conditional moments
come from one matrix exponential, and the orthonormal bases are evaluated
from closed-form coefficient arrays vectorized over the transitions.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import optimize, special, stats

from . import oracle
from .affine import conditional_moments_batch
from .apps import BajdParams, HestonParams
from .weights import bilateral_matrix, laguerre_matrix

log = logging.getLogger(__name__)

METHODS = ("oracle", "expansion", "gaussian", "qml")


@dataclass(frozen=True)
class TimeSeries:
    """Observations ``values[i]`` at times ``(i+1) dt`` following the initial state ``x0``."""

    values: np.ndarray
    dt: float
    x0: object

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        x0 = np.asarray(self.x0, dtype=float)
        if not self.dt > 0:
            raise ValueError("spacing must be positive")
        if vals.size and vals.shape[1:] != x0.shape:
            raise ValueError(f"observation shape {vals.shape[1:]} does not match the initial state {x0.shape}")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(x0))):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "x0", x0)

    def __len__(self):
        return len(self.values)

    @property
    def previous(self) -> np.ndarray:
        """Conditioning state of every transition."""
        if not len(self):
            return self.values
        return np.concatenate([self.x0[None, ...], self.values[:-1]])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.values.ndim == 1:
                w.writerow(["index", "value"])
                w.writerow([0, repr(float(self.x0))])
                for i, v in enumerate(self.values, 1):
                    w.writerow([i, repr(float(v))])
            else:
                w.writerow(["index", "v", "x"])
                w.writerow([0, *map(repr, map(float, self.x0))])
                for i, row in enumerate(self.values, 1):
                    w.writerow([i, *map(repr, map(float, row))])

    @classmethod
    def from_csv(cls, path, dt: float) -> "TimeSeries":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        if data.shape[1] == 1:
            data = data[:, 0]
        return cls(data[1:], dt, data[0])


def _check_state(kind: str, data: TimeSeries):
    vals = np.concatenate([data.x0[None, ...], data.values]) if len(data) else data.x0[None, ...]
    if kind == "bajd" and np.any(vals < 0):
        raise ValueError("intensity observations must be nonnegative")
    if kind == "heston" and np.any(vals[:, 0] < 0):
        raise ValueError("variance observations must be nonnegative")


def _kind(params) -> str:
    if isinstance(params, BajdParams):
        return "bajd"
    if isinstance(params, HestonParams):
        return "heston"
    raise TypeError(f"unsupported parameter type {type(params).__name__}")


# batch expansions ---------------------------------------------------------------

def _gamma_factor(y, mu1, var, J):
    """Standardized points, log weight, log Jacobian and orthonormal basis values for a Gamma factor."""
    s = mu1 / var
    D = mu1 * s - 1.0
    xi = s * y
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = special.xlogy(D, xi) - xi - special.gammaln(1.0 + D)
    logw = np.where(xi > 0, logw, -np.inf)
    # three-term recurrence for L_n^(D), normalized afterwards
    L = np.empty(y.shape + (J + 1,))
    L[..., 0] = 1.0
    if J >= 1:
        L[..., 1] = 1.0 + D - xi
    for n in range(1, J):
        L[..., n + 1] = ((2 * n + 1 + D - xi) * L[..., n] - (n + D) * L[..., n - 1]) / (n + 1)
    norm2 = np.ones_like(D)
    H = np.empty_like(L)
    for n in range(J + 1):
        if n:
            norm2 = norm2 * (D + n) / n
        H[..., n] = (-1) ** n * L[..., n] / np.sqrt(norm2)
    return s, D, xi, logw, np.log(s), H


def _monomial_powers(x, J):
    return x[..., None] ** np.arange(J + 1)


def bajd_transition_logpdf(y, yprev, dt: float, p: BajdParams, method: str = "expansion", J: int = 4):
    """Log transition densities for arrays of ``(y, yprev)`` pairs.

    Negative pseudo-densities return ``nan``; the caller decides how to count them.
    """
    y, yprev = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(yprev, dtype=float))
    if method == "oracle":
        with np.errstate(divide="ignore", invalid="ignore"):
            g = oracle.bajd_transition_density(y, yprev, dt, *p.as_tuple())
            return np.where(g > 0, np.log(np.abs(g)), np.where(g < 0, np.nan, -np.inf))
    k = {"expansion": J, "gaussian": J, "qml": 2}[method]
    k = max(k, 2)
    basis, mom = conditional_moments_batch(p.model(), yprev.reshape(-1, 1), dt, k)
    mom = mom.reshape(y.shape + (-1,))
    mu1, mu2 = mom[..., 1], mom[..., 2]
    var = mu2 - mu1 * mu1
    if method == "expansion":
        s, D, xi, logw, logjac, H = _gamma_factor(y, mu1, var, J)
        sk = _monomial_powers(s, J)
        mbar = mom[..., : J + 1] * sk
        c = np.einsum("...nk,...k->...n", laguerre_matrix(D, J), mbar)
        c[..., 0] = 1.0
    else:
        Jg = 2 if method == "qml" else J
        sd = np.sqrt(var)
        xi = (y - mu1) / sd
        logw = -0.5 * xi * xi - 0.5 * math.log(2 * math.pi)
        logjac = -np.log(sd)
        H = _hermite_values(xi, Jg)
        c = np.zeros(y.shape + (Jg + 1,))
        c[..., 0] = 1.0
        if Jg >= 3:
            cm = _central_std_moments(mom, mu1, sd, Jg)
            c = np.einsum("nk,...k->...n", _hermite_matrix(Jg), cm)
            c[..., 0] = 1.0
    ratio = np.sum(c * H, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = logw + logjac + np.log(np.where(ratio > 0, ratio, np.nan))
    return np.where(np.isneginf(logw), -np.inf, out)


def _hermite_matrix(J: int) -> np.ndarray:
    he = [np.array([1.0]), np.array([0.0, 1.0])]
    for n in range(1, J):
        nxt = np.zeros(n + 2)
        nxt[1:] += he[n]
        nxt[:n] -= n * he[n - 1]
        he.append(nxt)
    M = np.zeros((J + 1, J + 1))
    for n in range(J + 1):
        M[n, : n + 1] = he[n][: n + 1] / math.sqrt(math.factorial(n))
    return M


def _hermite_values(xi, J):
    He = np.empty(np.shape(xi) + (J + 1,))
    He[..., 0] = 1.0
    if J >= 1:
        He[..., 1] = xi
    for n in range(1, J):
        He[..., n + 1] = xi * He[..., n] - n * He[..., n - 1]
    return He / np.sqrt(special.factorial(np.arange(J + 1)))


def _central_std_moments(raw, mu1, sd, J):
    """Moments of ``(Y - mu1)/sd`` from raw moments along the last axis."""
    out = np.zeros(raw.shape[:-1] + (J + 1,))
    for n in range(J + 1):
        acc = np.zeros(raw.shape[:-1])
        for k in range(n + 1):
            acc = acc + math.comb(n, k) * raw[..., k] * (-mu1) ** (n - k)
        out[..., n] = acc / sd**n
    return out


def heston_transition_logpdf(v, x, vprev, xprev, dt: float, p: HestonParams, method: str = "expansion",
                             J: int = 4, C: float | None = 1.0 / 3.0):
    """Log joint transition densities of (variance, log-price) pairs.

    ``expansion`` uses the Gamma x bilateral-Gamma weight with fixed ``C``
    (``None`` sets ``C`` per transition to the excess kurtosis of the
    standardized log-price), ``gaussian`` the Gamma x Gaussian weight and
    ``qml`` the bivariate Gaussian with the exact first two moments.
    """
    v, x, vprev, xprev = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (v, x, vprev, xprev)))
    if method == "oracle":
        g = oracle.heston_joint_density(v, x, dt, *p.as_tuple(), vprev, xprev)
        with np.errstate(divide="ignore"):
            return np.where(g > 0, np.log(np.abs(g)), np.where(g < 0, np.nan, -np.inf))
    K = 2 if method == "qml" else max(J, 4 if C is None else 2)
    basis, mom = conditional_moments_batch(p.model(), np.column_stack([vprev.ravel(), np.zeros(vprev.size)]), dt, K)
    idx = {b: i for i, b in enumerate(basis)}
    M = lambda a, b: mom[:, idx[(a, b)]]
    xr = (x - xprev).ravel()
    vr = v.ravel()
    m1, m2 = M(1, 0), M(0, 1)
    a1 = M(2, 0) - m1 * m1
    b = M(1, 1) - m1 * m2
    a2 = M(0, 2) - m2 * m2
    resid = a2 - b * b / a1
    if method == "qml":
        det = a1 * a2 - b * b
        dv, dx = vr - m1, xr - m2
        q = (a2 * dv * dv - 2 * b * dv * dx + a1 * dx * dx) / det
        return (-0.5 * q - math.log(2 * math.pi) - 0.5 * np.log(det)).reshape(v.shape)
    # xi1 = A11 v ; xi2 = A21 v + A22 x + sh
    r = np.sqrt(resid)
    A11 = m1 / a1
    A21 = -b / (a1 * r)
    A22 = 1.0 / r
    sh = (b * m1 / a1 - m2) / r
    kmax = max(J, 4) if C is None else J
    mbar = {}
    for p1 in range(kmax + 1):
        for q in range(kmax + 1 - p1):
            acc = np.zeros_like(vr)
            for i in range(q + 1):
                for j in range(q - i + 1):
                    l = q - i - j
                    co = math.factorial(q) / (math.factorial(i) * math.factorial(j) * math.factorial(l))
                    acc = acc + co * A21**i * A22**j * sh**l * M(p1 + i, j)
            mbar[(p1, q)] = A11**p1 * acc
    s, D, xi1, logw1, logj1, H1 = _gamma_factor(vr, m1, a1, J)
    xi2 = A21 * vr + A22 * xr + sh
    if method == "expansion":
        Cv = mbar[(0, 4)] - 3.0 if C is None else np.full_like(vr, C)
        if np.any(Cv <= 0):
            raise ValueError("bilateral weight needs positive excess kurtosis")
        B = bilateral_matrix(Cv, J)
        H2 = np.einsum("...nk,...k->...n", B, _monomial_powers(xi2, J))
        nu = 3.0 / Cv - 0.5
        sc = np.sqrt(Cv / 6.0)
        z = np.abs(xi2) / sc
        lp = (3 * (Cv - 2) / (4 * Cv) * math.log(2) + (Cv + 6) / (4 * Cv) * math.log(3)
              - (Cv + 6) / (4 * Cv) * np.log(Cv) - 0.5 * math.log(math.pi) - special.gammaln(3 / Cv))
        with np.errstate(divide="ignore"):
            logw2 = lp + special.xlogy(nu, np.abs(xi2)) + np.log(special.kve(nu, z)) - z
        small = ~np.isfinite(logw2)
        if np.any(small):
            from .weights import BilateralGammaWeight

            logw2[small] = [math.log(BilateralGammaWeight(float(c)).density(float(t))) for c, t in
                            zip(Cv[small], xi2[small])]
    else:
        B = np.broadcast_to(_hermite_matrix(J), vr.shape + (J + 1, J + 1))
        H2 = _hermite_values(xi2, J)
        logw2 = -0.5 * xi2 * xi2 - 0.5 * math.log(2 * math.pi)
    L = laguerre_matrix(D, J)
    # c_{n,m} = sum_{k,l} L[n,k] B[m,l] mbar[k,l] over n+m <= J
    ratio = np.ones_like(vr)
    for n in range(J + 1):
        for m in range(J + 1 - n):
            if n + m == 0:
                continue
            c = np.zeros_like(vr)
            for k in range(n + 1):
                for l in range(m + 1):
                    c = c + L[:, n, k] * B[:, m, l] * mbar[(k, l)]
            ratio = ratio + c * H1[:, n] * H2[:, m]
    logjac = np.log(A11 * A22)
    with np.errstate(invalid="ignore"):
        out = logw1 + logw2 + logjac + np.log(np.where(ratio > 0, ratio, np.nan))
    out = np.where(np.isneginf(logw1), -np.inf, out)
    return out.reshape(v.shape)


def log_likelihood(data: TimeSeries, params, method: str = "expansion", J: int = 4, C: float | None = 1.0 / 3.0,
                   counter: Counter | None = None) -> float:
    """Sum of log transition densities over all transitions.

    A negative pseudo-density at any datum makes the result ``-inf`` and
    increments ``counter["negative_density"]``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    kind = _kind(params)
    _check_state(kind, data)
    if not len(data):
        return 0.0
    prev = data.previous
    if kind == "bajd":
        lp = bajd_transition_logpdf(data.values, prev, data.dt, params, method, J)
    else:
        lp = heston_transition_logpdf(data.values[:, 0], data.values[:, 1], prev[:, 0], prev[:, 1], data.dt,
                                      params, method, J, C)
    if np.any(np.isnan(lp)):
        if counter is not None:
            counter["negative_density"] += 1
        return -math.inf
    return float(np.sum(lp))


# priors -------------------------------------------------------------------------

@dataclass(frozen=True)
class Prior:
    """Indicator constraints plus a (possibly improper) log-density kernel on the parameter vector."""

    constraint: Callable[[np.ndarray], bool]
    log_kernel: Callable[[np.ndarray], float]
    name: str = ""

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)) or not self.constraint(theta):
            return -math.inf
        return float(self.log_kernel(theta))


def _bajd_ok(t):
    kth, kappa, sigma, l, nu = t
    return 2 * kth > sigma**2 and sigma > 0 and l > 0 and nu > 0 and kappa > 0


def _heston_ok(t):
    kappa_v, kth_v, sigma, kth_x, rho = t
    return 2 * kth_v > sigma**2 and -1 < rho < 1 and sigma > 0 and kappa_v > 0


BAJD_PRIOR = Prior(_bajd_ok, lambda t: -math.log(t[2] * t[0] * t[3] * t[4]), "bajd")
HESTON_PRIOR = Prior(_heston_ok, lambda t: -math.log(t[2] * t[1]), "heston")
FLAT_PRIOR = Prior(lambda t: True, lambda t: 0.0, "flat")


def params_from_vector(kind: str, theta):
    theta = [float(v) for v in theta]
    return BajdParams(*theta) if kind == "bajd" else HestonParams(*theta)


def posterior_eval(data: TimeSeries, kind: str, theta, prior: Prior, method: str = "expansion", J: int = 4,
                   C: float | None = 1.0 / 3.0, counter: Counter | None = None) -> float:
    """Unnormalized log posterior ``log l(theta) + log pi(theta)``."""
    lp = prior(theta)
    if not math.isfinite(lp):
        return -math.inf
    try:
        p = params_from_vector(kind, theta)
    except ValueError:
        return -math.inf
    ll = log_likelihood(data, p, method, J, C, counter)
    return ll + lp if math.isfinite(ll) else -math.inf


@dataclass
class ChainResult:
    draws: np.ndarray
    logpost: np.ndarray
    accept_rate: float
    burn_accept_rate: float
    scale: float
    cov: np.ndarray
    diagnostics: list = field(default_factory=list)


def posterior_sample(logpost: Callable[[np.ndarray], float], theta0, n_iter: int, burn: int = 0, thin: int = 1,
                     seed: int | None = None, cov0=None, adapt_every: int = 100) -> ChainResult:
    """Random-walk Metropolis with Gaussian proposals ``N(0, scale^2 cov)``.

    During burn-in the scale is tuned towards a 0.25 acceptance rate and
    ``cov`` is re-estimated from the burn-in path; afterwards the kernel is
    fixed. Returns the post-burn-in draws thinned by ``thin``.
    """
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta0, dtype=float).copy()
    d = theta.size
    cov = np.diag((0.01 * np.maximum(np.abs(theta), 1e-8)) ** 2) if cov0 is None else np.asarray(cov0, float)
    scale = 2.38 / math.sqrt(d)
    lp = logpost(theta)
    if not math.isfinite(lp):
        raise ValueError("starting point has zero posterior density")
    chol = np.linalg.cholesky(cov)
    draws, lps = [], []
    acc_burn = acc_main = 0
    window = 0
    path = []
    for it in range(n_iter):
        prop = theta + scale * chol @ rng.standard_normal(d)
        lq = logpost(prop)
        if math.log(rng.uniform()) < lq - lp:
            theta, lp = prop, lq
            ok = True
        else:
            ok = False
        if it < burn:
            acc_burn += ok
            window += ok
            path.append(theta.copy())
            if (it + 1) % adapt_every == 0:
                rate = window / adapt_every
                scale *= math.exp((rate - 0.25) * 2.0)
                window = 0
                if it + 1 >= burn // 2 and len(path) > 10 * d:
                    emp = np.cov(np.array(path[len(path) // 2 :]).T)
                    try:
                        chol = np.linalg.cholesky(emp + 1e-12 * np.diag(np.diag(emp)) + 1e-300 * np.eye(d))
                        cov = emp
                    except np.linalg.LinAlgError:
                        pass
        else:
            acc_main += ok
            if (it - burn) % thin == 0:
                draws.append(theta.copy())
                lps.append(lp)
    diags = []
    if burn and acc_burn == 0:
        diags.append("all proposals rejected during burn-in: proposal scale is too large")
        warnings.warn(diags[-1], RuntimeWarning, stacklevel=2)
    n_main = max(n_iter - burn, 1)
    return ChainResult(np.array(draws), np.array(lps), acc_main / n_main, acc_burn / max(burn, 1), scale, cov,
                       diags)


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's automatic window."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] == 0:
        return 1.0
    acf = acf / acf[0]
    tau = 2.0 * np.cumsum(acf) - 1.0
    for m in range(1, n):
        if m >= c * tau[m]:
            return float(tau[m])
    return float(tau[-1])


def ks_statistic(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and p-value (exact for small samples)."""
    a, b = np.asarray(a, dtype=float).ravel(), np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("KS comparison needs nonempty samples")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("KS comparison needs finite samples")
    res = stats.ks_2samp(a, b, method="auto")
    return float(res.statistic), float(res.pvalue)


# maximum likelihood ---------------------------------------------------------------

def _to_unconstrained(kind: str, theta) -> np.ndarray:
    if kind == "bajd":
        kth, kappa, sigma, l, nu = theta
        return np.array([math.log(kth), math.log(kappa), special.logit(sigma**2 / (2 * kth)), math.log(l),
                         math.log(nu)])
    kappa_v, kth_v, sigma, kth_x, rho = theta
    return np.array([math.log(kappa_v), math.log(kth_v), special.logit(sigma**2 / (2 * kth_v)), kth_x,
                     math.atanh(rho)])


def _from_unconstrained(kind: str, z) -> np.ndarray:
    if kind == "bajd":
        kth = math.exp(z[0])
        return np.array([kth, math.exp(z[1]), math.sqrt(2 * kth * special.expit(z[2])), math.exp(z[3]),
                         math.exp(z[4])])
    kth_v = math.exp(z[1])
    return np.array([math.exp(z[0]), kth_v, math.sqrt(2 * kth_v * special.expit(z[2])), z[3], math.tanh(z[4])])


@dataclass
class FitResult:
    params: object
    loglik: float
    success: bool
    grad_norm: float
    n_iter: int
    n_eval: int
    negative_density: int
    message: str
    stderr: np.ndarray | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        d["stderr"] = None if self.stderr is None else [float(v) for v in self.stderr]
        return d


def observed_info_stderr(loglik: Callable[[np.ndarray], float], theta, rel: float = 1e-4) -> np.ndarray:
    """Standard errors from a central-difference Hessian of ``loglik`` at ``theta``.

    Entries are NaN where the Hessian is not negative definite or a
    perturbed point leaves the parameter space.
    """
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    h = rel * np.maximum(np.abs(theta), 1e-3)
    f0 = loglik(theta)
    H = np.empty((d, d))
    for i in range(d):
        for j in range(i, d):
            if i == j:
                e = np.zeros(d)
                e[i] = h[i]
                H[i, i] = (loglik(theta + e) - 2 * f0 + loglik(theta - e)) / h[i] ** 2
            else:
                ei = np.zeros(d)
                ej = np.zeros(d)
                ei[i], ej[j] = h[i], h[j]
                H[i, j] = H[j, i] = (loglik(theta + ei + ej) - loglik(theta + ei - ej) - loglik(theta - ei + ej)
                                     + loglik(theta - ei - ej)) / (4 * h[i] * h[j])
    if not np.all(np.isfinite(H)):
        return np.full(d, np.nan)
    try:
        cov = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        return np.full(d, np.nan)
    dg = np.diag(cov)
    return np.where(dg > 0, np.sqrt(np.abs(dg)), np.nan)


def mle_fit(data: TimeSeries, start, method: str = "expansion", J: int = 4, C: float | None = 1.0 / 3.0,
            gtol: float = 1e-4, maxiter: int = 500, step: float = 1e-5, stderr: bool = False) -> FitResult:
    """Maximize the (approximate) log-likelihood from ``start``.

    The search runs L-BFGS-B on an unconstrained reparametrization in
    which ``sigma^2 / (2 kth)`` is a logistic variable, so the boundary
    ``2 kth > sigma^2`` is never crossed. Gradients are central
    differences of the per-observation log-likelihood; ``success`` means
    their sup-norm is below ``gtol`` at the returned point. With
    ``stderr`` the observed-information standard errors are attached.
    """
    kind = _kind(start)
    counter = Counter()
    n = max(len(data), 1)
    neval = [0]

    def f(z):
        neval[0] += 1
        try:
            p = params_from_vector(kind, _from_unconstrained(kind, z))
        except (ValueError, OverflowError):
            return 1e10
        ll = log_likelihood(data, p, method, J, C, counter)
        return -ll / n if math.isfinite(ll) else 1e10

    def grad(z):
        g = np.empty_like(z)
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = step
            g[i] = (f(z + e) - f(z - e)) / (2 * step)
        return g

    def fun(z):
        return f(z), grad(z)

    z0 = _to_unconstrained(kind, start.as_tuple())
    res = optimize.minimize(fun, z0, jac=True, method="L-BFGS-B",
                            options=dict(maxiter=maxiter, gtol=gtol * 1e-2, ftol=1e-14, maxcor=20))
    g = grad(res.x)
    gn = float(np.max(np.abs(g)))
    p = params_from_vector(kind, _from_unconstrained(kind, res.x))
    ll = -f(res.x) * n
    se = None
    if stderr:
        def loglik(theta):
            try:
                return log_likelihood(data, params_from_vector(kind, theta), method, J, C)
            except ValueError:
                return math.nan
        se = observed_info_stderr(loglik, p.as_tuple())
    return FitResult(p, ll, bool(gn <= gtol and math.isfinite(ll)), gn, int(res.nit), neval[0],
                     counter["negative_density"], str(res.message), se)


# simulation -----------------------------------------------------------------------

def bajd_inverse_cdf(u, y0, dt: float, p: BajdParams, c: float = 1e-6, eps: float = 1e-6,
                     max_newton: int = 20, return_iters: bool = False):
    """Invert the transition CDF by Newton steps on ``y = c + e^w / (1 + e^w)``.

    Every draw keeps a bracket in ``w``; a step leaving the bracket is
    replaced by bisection, and draws still unresolved after
    ``max_newton`` iterations continue by bisection alone.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), u.shape)
    w = special.logit(np.clip(y0 - c, 1e-12, 1 - 1e-12))
    lo = np.full(u.shape, -40.0)
    hi = np.full(u.shape, 40.0)
    active = np.ones(u.shape, dtype=bool)
    iters = np.zeros(u.shape, dtype=int)
    args = p.as_tuple()
    for it in range(200):
        if not np.any(active):
            break
        a = np.nonzero(active)[0]
        e = special.expit(w[a])
        y = c + e
        G = oracle.bajd_transition_cdf(y, y0[a], dt, *args)
        f = G - u[a]
        done = np.abs(f) < eps
        iters[a] += 1
        hi[a] = np.where(f > 0, w[a], hi[a])
        lo[a] = np.where(f <= 0, w[a], lo[a])
        mid = 0.5 * (lo[a] + hi[a])
        if it < max_newton:
            g = oracle.bajd_transition_density(y, y0[a], dt, *args)
            with np.errstate(divide="ignore", invalid="ignore"):
                wn = w[a] - f / (g * e * (1 - e))
            bad = ~np.isfinite(wn) | (wn <= lo[a]) | (wn >= hi[a])
            wn = np.where(bad, mid, wn)
        else:
            wn = mid
        w[a] = np.where(done, w[a], wn)
        active[a[done]] = False
        if np.all(hi[a] - lo[a] < 1e-14):
            break
    y = c + special.expit(w)
    return (y, iters) if return_iters else y


def simulate_bajd_exact(p: BajdParams, y0: float, dt: float, N: int, seed: int | None = None, c: float = 1e-6,
                        eps: float = 1e-6) -> TimeSeries:
    """Sequential inverse-CDF draws from the exact transition law."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=N)
    out = np.empty(N)
    prev = float(y0)
    for i in range(N):
        prev = float(bajd_inverse_cdf(u[i], prev, dt, p, c, eps)[0])
        out[i] = prev
    return TimeSeries(out, dt, y0)


def simulate_heston(p: HestonParams, x0: float, v0: float, dt: float, N: int, substeps: int = 20,
                    seed: int | None = None, paths: int | None = None, floor: float = 1e-12):
    """Full-truncation Euler for the variance with ``substeps`` steps per observation.

    Given the piecewise-constant variance on each substep the log-price
    increment is drawn exactly from its conditional Gaussian law. With
    ``paths`` set, returns arrays ``(paths, N)`` of variance and log-price
    instead of a single :class:`TimeSeries`.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    rng = np.random.default_rng(seed)
    m = 1 if paths is None else int(paths)
    h = dt / substeps
    rho, rc = p.rho, math.sqrt(1 - p.rho**2)
    V = np.full(m, float(v0))
    X = np.full(m, float(x0))
    vs = np.empty((m, N))
    xs = np.empty((m, N))
    for i in range(N):
        for _ in range(substeps):
            z1 = rng.standard_normal(m)
            z2 = rng.standard_normal(m)
            vp = np.maximum(V, 0.0)
            sq = np.sqrt(vp * h)
            X = X + (p.kth_x - 0.5 * vp) * h + sq * (rho * z1 + rc * z2)
            V = V + (p.kth_v - p.kappa_v * vp) * h + p.sigma * sq * z1
        vs[:, i] = np.maximum(V, floor)
        xs[:, i] = X
    if paths is not None:
        return vs, xs
    return TimeSeries(np.column_stack([vs[0], xs[0]]), dt, np.array([v0, x0], dtype=float))
