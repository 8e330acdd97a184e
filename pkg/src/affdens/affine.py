"""Affine jump-diffusions on the canonical state space R_+^m x R^n.

The generator acting on a smooth ``f`` is

    A f(x) = sum_kl (diag(0, a) + sum_i x_i alpha_i)_kl d_k d_l f
             + (b + beta x)^T grad f
             + int (f(x + xi) - f(x)) (m(dxi) + sum_i x_i mu_i(dxi)),

with no factor 1/2 in front of the second-order term. Jumps are finite
activity and the drift ``b`` is already compensated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .poly import Polynomial, graded_indices


@dataclass(frozen=True)
class ExponentialJumps:
    """Jumps ``xi = Z e`` with ``Z ~ Exp(mean nu)`` arriving at rate ``intensity``."""

    intensity: float
    mean: float
    direction: tuple = (1.0,)

    def moment(self, beta) -> float:
        """``int xi^beta mu(dxi)``."""
        k = sum(beta)
        if k == 0:
            return 0.0
        e = np.prod([float(ei) ** bi for ei, bi in zip(self.direction, beta)])
        return self.intensity * e * math.factorial(k) * self.mean**k

    def transform(self, psi):
        """``int (exp(psi^T xi) - 1) mu(dxi)`` for ``psi`` of shape ``(..., d)``."""
        s = psi @ np.asarray(self.direction, dtype=float)
        return self.intensity * self.mean * s / (1.0 - self.mean * s)

    def pole_distance(self, psi):
        """``1 - nu Re(psi^T e)``; the transform is singular where this reaches 0."""
        s = np.real(psi @ np.asarray(self.direction, dtype=float))
        return 1.0 - self.mean * s

    def params(self):
        return {"family": "exponential", "intensity": self.intensity, "mean": self.mean,
                "direction": list(self.direction)}


@dataclass(frozen=True)
class PointMassJumps:
    """Jumps of fixed size vector ``size`` arriving at rate ``intensity``."""

    intensity: float
    size: tuple

    def moment(self, beta) -> float:
        if sum(beta) == 0:
            return 0.0
        return self.intensity * float(np.prod([float(z) ** b for z, b in zip(self.size, beta)]))

    def transform(self, psi):
        return self.intensity * (np.exp(psi @ np.asarray(self.size, dtype=float)) - 1.0)

    def pole_distance(self, psi):
        return np.full(np.shape(psi)[:-1], np.inf)

    def params(self):
        return {"family": "point_mass", "intensity": self.intensity, "size": list(self.size)}


def jumps_from_params(d: dict):
    fam = d.get("family")
    if fam == "exponential":
        return ExponentialJumps(d["intensity"], d["mean"], tuple(d.get("direction", (1.0,))))
    if fam == "point_mass":
        return PointMassJumps(d["intensity"], tuple(d["size"]))
    raise ValueError(f"unsupported jump family {fam!r}")


@dataclass(frozen=True)
class AffineModel:
    """Parameters of an affine jump-diffusion with drift ``b + beta x``.

    ``alpha`` holds one ``d x d`` matrix per nonnegative coordinate,
    ``a`` the constant diffusion of the real-valued block, ``jump_m`` the
    state-independent jump families and ``jump_mu[i]`` the families whose
    intensity is proportional to ``x_i``.
    """

    m: int
    n: int
    a: np.ndarray
    alpha: tuple
    b: np.ndarray
    beta: np.ndarray
    jump_m: tuple = ()
    jump_mu: tuple = field(default=None)

    def __post_init__(self):
        d = self.m + self.n
        if d < 1:
            raise ValueError("model needs at least one state variable")
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("a", np.asarray(self.a, dtype=float).reshape(self.n, self.n))
        set_("alpha", tuple(np.asarray(al, dtype=float).reshape(d, d) for al in self.alpha))
        set_("b", np.asarray(self.b, dtype=float).reshape(d))
        set_("beta", np.asarray(self.beta, dtype=float).reshape(d, d))
        set_("jump_m", tuple(self.jump_m))
        mu = self.jump_mu if self.jump_mu is not None else tuple(() for _ in range(self.m))
        set_("jump_mu", tuple(tuple(x) for x in mu))
        if len(self.alpha) != self.m or len(self.jump_mu) != self.m:
            raise ValueError("need one alpha matrix and one jump list per nonnegative coordinate")
        self.validate()

    @property
    def d(self) -> int:
        return self.m + self.n

    def validate(self):
        m, d = self.m, self.d
        tol = 1e-12
        for i in range(m):
            if self.b[i] < -tol:
                raise ValueError(f"admissibility: b[{i}] = {self.b[i]} must be >= 0")
            al = self.alpha[i]
            if not np.allclose(al, al.T):
                raise ValueError(f"alpha[{i}] must be symmetric")
            if np.linalg.eigvalsh(al).min() < -1e-12 * max(1.0, np.abs(al).max()):
                raise ValueError(f"alpha[{i}] must be positive semidefinite")
            for j in range(m):
                for k in range(m):
                    if (j, k) != (i, i) and abs(al[j, k]) > tol:
                        raise ValueError(f"alpha[{i}][{j},{k}] must vanish on the nonnegative block")
            for k in range(m, d):
                if abs(self.beta[i, k]) > tol:
                    raise ValueError(f"drift of x_{i} may not depend on real-valued x_{k}")
            for k in range(m):
                if k != i and self.beta[i, k] < -tol:
                    raise ValueError(f"beta[{i},{k}] must be >= 0")
        if self.n and np.linalg.eigvalsh(self.a).min() < -1e-12 * max(1.0, np.abs(self.a).max()):
            raise ValueError("a must be positive semidefinite")
        for fam in self.jump_m + tuple(f for mu in self.jump_mu for f in mu):
            if isinstance(fam, ExponentialJumps):
                if len(fam.direction) != d:
                    raise ValueError("jump direction length must equal the state dimension")
                if fam.intensity < 0 or fam.mean < 0:
                    raise ValueError("jump intensity and mean must be nonnegative")
                if any(fam.direction[i] < 0 for i in range(m)):
                    raise ValueError("jumps may not leave the nonnegative orthant")
            elif isinstance(fam, PointMassJumps):
                if len(fam.size) != d or any(fam.size[i] < 0 for i in range(m)):
                    raise ValueError("bad point-mass jump size")
            else:
                raise ValueError(f"unsupported jump family {type(fam).__name__}")

    @property
    def diffusion_const(self) -> np.ndarray:
        out = np.zeros((self.d, self.d))
        out[self.m:, self.m:] = self.a
        return out

    # generator on polynomials
    def _jump_moment(self, fams, eta) -> float:
        return sum(f.moment(eta) for f in fams)

    def generator(self, p: Polynomial) -> Polynomial:
        """Apply the generator to a polynomial."""
        if p.dim != self.d:
            raise ValueError("dimension mismatch")
        out = Polynomial(self.d)
        for g, c in p.terms.items():
            out = out + self._gen_monomial(g).scale(c)
        return out

    def _gen_monomial(self, g) -> Polynomial:
        d, m = self.d, self.m
        t: dict = {}

        def add(idx, c):
            if c != 0.0:
                idx = tuple(idx)
                t[idx] = t.get(idx, 0.0) + c

        def dd(k, l):
            # coefficient and exponent of d_k d_l x^g
            e = list(g)
            if k == l:
                c = g[k] * (g[k] - 1)
                e[k] -= 2
            else:
                c = g[k] * g[l]
                e[k] -= 1
                e[l] -= 1
            return c, e

        A0 = self.diffusion_const
        for k in range(d):
            for l in range(d):
                c, e = dd(k, l)
                if c == 0:
                    continue
                add(e, A0[k, l] * c)
                for i in range(m):
                    if self.alpha[i][k, l] != 0.0:
                        ee = list(e)
                        ee[i] += 1
                        add(ee, self.alpha[i][k, l] * c)
        for k in range(d):
            if g[k] == 0:
                continue
            e = list(g)
            e[k] -= 1
            add(e, self.b[k] * g[k])
            for j in range(d):
                if self.beta[k, j] != 0.0:
                    ee = list(e)
                    ee[j] += 1
                    add(ee, self.beta[k, j] * g[k])
        # jumps: (x + xi)^g - x^g expanded binomially
        if self.jump_m or any(self.jump_mu):
            for delta in np.ndindex(*[gi + 1 for gi in g]):
                if delta == tuple(g):
                    continue
                eta = tuple(gi - di for gi, di in zip(g, delta))
                binom = np.prod([math.comb(gi, di) for gi, di in zip(g, delta)])
                add(delta, binom * self._jump_moment(self.jump_m, eta))
                for i in range(m):
                    if self.jump_mu[i]:
                        ee = list(delta)
                        ee[i] += 1
                        add(ee, binom * self._jump_moment(self.jump_mu[i], eta))
        return Polynomial(d, t)

    # Riccati right-hand side
    def riccati_rhs(self, psi):
        """Right-hand sides ``(dphi, dpsi)`` for ``psi`` of shape ``(N, d)``.

        Works for real or complex ``psi``.
        """
        m = self.m
        dpsi = psi @ self.beta
        for i in range(m):
            dpsi[:, i] += np.einsum("nk,kl,nl->n", psi, self.alpha[i], psi)
            for f in self.jump_mu[i]:
                dpsi[:, i] += f.transform(psi)
        pj = psi[:, m:]
        dphi = np.einsum("nk,kl,nl->n", pj, self.a, pj) + psi @ self.b
        for f in self.jump_m:
            dphi = dphi + f.transform(psi)
        return dphi, dpsi

    def pole_distance(self, psi):
        out = np.full(psi.shape[0], np.inf)
        for f in self.jump_m + tuple(f for mu in self.jump_mu for f in mu):
            out = np.minimum(out, f.pole_distance(psi))
        return out

    def params(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "a": self.a.tolist(),
            "alpha": [al.tolist() for al in self.alpha],
            "b": self.b.tolist(),
            "beta": self.beta.tolist(),
            "jump_m": [f.params() for f in self.jump_m],
            "jump_mu": [[f.params() for f in mu] for mu in self.jump_mu],
        }

    @classmethod
    def from_params(cls, d: dict) -> "AffineModel":
        return cls(
            m=int(d["m"]),
            n=int(d["n"]),
            a=np.asarray(d.get("a", np.zeros((d["n"], d["n"]))), dtype=float),
            alpha=tuple(np.asarray(al, dtype=float) for al in d["alpha"]),
            b=np.asarray(d["b"], dtype=float),
            beta=np.asarray(d["beta"], dtype=float),
            jump_m=tuple(jumps_from_params(f) for f in d.get("jump_m", [])),
            jump_mu=tuple(tuple(jumps_from_params(f) for f in mu) for mu in d.get("jump_mu", [[]] * d["m"])),
        )


def bajd_model(kth: float, kappa: float, sigma: float, l: float, nu: float) -> AffineModel:
    """Square-root diffusion with exponential jumps, ``dY = (kth - kappa Y)dt + sigma sqrt(Y) dW + dJ``."""
    jumps = (ExponentialJumps(l, nu, (1.0,)),) if l > 0 and nu > 0 else ()
    return AffineModel(m=1, n=0, a=np.zeros((0, 0)), alpha=(np.array([[sigma**2 / 2]]),),
                       b=np.array([kth]), beta=np.array([[-kappa]]), jump_m=jumps)


def integrated_model(model: AffineModel) -> AffineModel:
    """Augment a scalar nonnegative model ``Y`` with ``Z_t = int_0^t Y ds``."""
    if model.d != 1 or model.m != 1:
        raise ValueError("integrated_model expects a scalar nonnegative model")
    al = np.zeros((2, 2))
    al[0, 0] = model.alpha[0][0, 0]
    beta = np.array([[model.beta[0, 0], 0.0], [1.0, 0.0]])

    def lift(f):
        if isinstance(f, ExponentialJumps):
            return ExponentialJumps(f.intensity, f.mean, (f.direction[0], 0.0))
        return PointMassJumps(f.intensity, (f.size[0], 0.0))

    return AffineModel(m=1, n=1, a=np.zeros((1, 1)), alpha=(al,), b=np.array([model.b[0], 0.0]), beta=beta,
                       jump_m=tuple(lift(f) for f in model.jump_m),
                       jump_mu=(tuple(lift(f) for f in model.jump_mu[0]),))


def heston_model(kappa_v: float, kth_v: float, sigma: float, kth_x: float, rho: float) -> AffineModel:
    """Stochastic variance ``V`` with log-price ``X``:

    ``dV = (kth_v - kappa_v V)dt + sigma sqrt(V) dW_1``,
    ``dX = (kth_x - V/2)dt + sqrt(V) dW_2``, ``d<W_1, W_2> = rho dt``.
    """
    al = np.array([[sigma**2 / 2, rho * sigma / 2], [rho * sigma / 2, 0.5]])
    return AffineModel(m=1, n=1, a=np.zeros((1, 1)), alpha=(al,), b=np.array([kth_v, kth_x]),
                       beta=np.array([[-kappa_v, 0.0], [-0.5, 0.0]]))


@dataclass(frozen=True)
class QMatrix:
    """Generator restricted to polynomials of degree ``<= k`` in the graded monomial basis."""

    k: int
    basis: tuple
    matrix: np.ndarray

    def index(self, alpha) -> int:
        return self.basis.index(tuple(alpha))

    def is_degree_triangular(self) -> bool:
        deg = np.array([sum(a) for a in self.basis])
        mask = deg[:, None] > deg[None, :]
        return bool(np.all(self.matrix[mask] == 0.0))

    def is_upper_triangular(self) -> bool:
        return bool(np.all(np.tril(self.matrix, -1) == 0.0))


def build_q_matrix(model: AffineModel, k: int) -> QMatrix:
    """Matrix ``Q`` whose column ``j`` holds the coefficients of ``A x^{alpha(j)}``."""
    if k < 0:
        raise ValueError("degree must be nonnegative")
    basis = tuple(graded_indices(model.d, k))
    pos = {a: i for i, a in enumerate(basis)}
    Q = np.zeros((len(basis), len(basis)))
    for j, g in enumerate(basis):
        for idx, c in model._gen_monomial(g).terms.items():
            Q[pos[idx], j] += c
    return QMatrix(k, basis, Q)


def monomial_values(basis, x) -> np.ndarray:
    """Rows ``(x^alpha)_alpha`` for points ``x`` of shape ``(N, d)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    k = max(sum(a) for a in basis)
    pows = x[:, :, None] ** np.arange(k + 1)
    out = np.ones((x.shape[0], len(basis)))
    for j, a in enumerate(basis):
        for i, e in enumerate(a):
            if e:
                out[:, j] *= pows[:, i, e]
    return out


def moment_propagator(model: AffineModel, t: float, k: int, Q: QMatrix | None = None):
    """``(basis, exp(Q t))``; row-vector of monomials at ``x0`` times it gives all moments."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    Q = Q or build_q_matrix(model, k)
    return Q.basis, expm(Q.matrix * t)


def conditional_moments(model: AffineModel, x0, t: float, k: int) -> dict:
    """``E[X_t^alpha | X_0 = x0]`` for every ``|alpha| <= k``."""
    x0 = np.asarray(x0, dtype=float).reshape(model.d)
    if np.any(x0[: model.m] < 0):
        raise ValueError("x0 outside the canonical state space")
    basis, E = moment_propagator(model, t, k)
    row = monomial_values(basis, x0[None, :])[0] @ E
    return {a: float(v) for a, v in zip(basis, row)}


def conditional_moments_batch(model: AffineModel, x0s, t: float, k: int):
    """Moments for many starting points; returns ``(basis, array (N, n_basis))``."""
    basis, E = moment_propagator(model, t, k)
    return basis, monomial_values(basis, x0s) @ E


@dataclass
class RegularityReport:
    density_exists: bool
    smoothness_p: float | None
    kcal_full_rank: bool
    assumption2_ok: bool | None = None
    exp_moment_radii: object = None
    bound: float = float("nan")
    messages: list = field(default_factory=list)


def _largest_p(r: float) -> float | None:
    """Largest integer ``p >= 0`` with ``p < r``, using a 1e-12 slack."""
    if math.isinf(r):
        return math.inf
    p = math.ceil(r - 1e-12) - 1
    return p if p >= 0 else None


def kcal_matrix(model: AffineModel) -> np.ndarray:
    d, m, n = model.d, model.m, model.n
    blocks = [sum(model.alpha) if m else np.zeros((d, d))]
    BJJ = model.beta.T[m:, m:]
    M = np.eye(n)
    for _ in range(max(n, 1) if n else 0):
        blk = np.zeros((d, d))
        blk[m:, m:] = M.T @ model.a
        blocks.append(blk)
        M = M @ BJJ
    return np.hstack(blocks)


def check_density_existence(model: AffineModel) -> RegularityReport:
    """Rank test of the ``K`` matrix plus the smoothness bound ``p < min_i b_i/alpha_{i,ii} - 1``."""
    K = kcal_matrix(model)
    full = bool(np.linalg.matrix_rank(K) == model.d)
    ratios = []
    for i in range(model.m):
        aii = model.alpha[i][i, i]
        ratios.append(math.inf if aii == 0 else model.b[i] / aii)
    r = min(ratios) - 1 if ratios else math.inf
    p = _largest_p(r)
    msgs = []
    if not full:
        msgs.append("diffusion rank condition violated")
    if p is None:
        msgs.append(f"smoothness bound violated: min b_i/alpha_ii - 1 = {r:.6g} <= 0")
    return RegularityReport(full and p is not None, p, full, bound=r, messages=msgs)


def check_integrated_existence(model: AffineModel) -> RegularityReport:
    """Smoothness of the law of ``int_0^t Y ds`` for scalar nonnegative ``Y``: ``p < b/(2 alpha) - 1``."""
    if model.d != 1 or model.m != 1:
        raise ValueError("check_integrated_existence expects a scalar nonnegative model")
    al, b = model.alpha[0][0, 0], model.b[0]
    if al <= 0:
        raise ValueError("alpha must be positive")
    r = b / (2 * al) - 1
    p = _largest_p(r)
    msgs = [] if p is not None else [f"b/(2 alpha) - 1 = {r:.6g} <= 0"]
    return RegularityReport(p is not None, p, True, bound=r, messages=msgs)


def check_assumption2(D: float, p, exp_ok: bool = True) -> bool:
    """``ceil(D/2) <= p`` (square integrability of ``g/w`` at the origin) and the tail condition."""
    if p is None:
        return False
    return bool(exp_ok and math.ceil(D / 2) <= p)


@dataclass
class ExpMomentResult:
    status: str  # "finite" or "unverified"
    reason: str | None = None  # "ode_blow_up" or "jump_pole"
    t_star: float | None = None
    corners: np.ndarray | None = None

    @property
    def finite(self) -> bool:
        return self.status == "finite"


def exp_moment_check(model: AffineModel, eps1: float, eps2: float, T: float,
                     blow_up: float = 1e10) -> ExpMomentResult:
    """Integrate the real Riccati system from every corner of the probe box.

    A solution that leaves every bound on ``[0, T]`` certifies a finite
    exponential moment. Blow-up is reported as ``"unverified"``: it does
    not by itself prove the moment infinite.
    """
    m, n = model.m, model.n
    corners = np.array(list(np.ndindex(*([2] * model.d))), dtype=float)
    scale = np.array([eps1] * m + [eps2] * n)
    q = (2 * corners - 1) * scale
    if not np.any(q):
        return ExpMomentResult("finite", corners=q)
    N, d = q.shape
    if np.any(model.pole_distance(q) <= 0):
        return ExpMomentResult("unverified", "jump_pole", 0.0, q)

    def rhs(t, y):
        psi = y[N:].reshape(N, d)
        dphi, dpsi = model.riccati_rhs(psi)
        return np.concatenate([dphi, dpsi.ravel()])

    def ev_blow(t, y):
        return blow_up - np.abs(y[N:]).max()

    def ev_pole(t, y):
        return model.pole_distance(y[N:].reshape(N, d)).min() - 1e-9

    ev_blow.terminal = ev_pole.terminal = True
    y0 = np.concatenate([np.zeros(N), q.ravel()])
    sol = solve_ivp(rhs, (0.0, T), y0, method="DOP853", rtol=1e-10, atol=1e-12, events=[ev_blow, ev_pole])
    if sol.status == 1:
        if sol.t_events[1].size:
            return ExpMomentResult("unverified", "jump_pole", float(sol.t_events[1][0]), q)
        return ExpMomentResult("unverified", "ode_blow_up", float(sol.t_events[0][0]), q)
    if sol.status != 0:
        return ExpMomentResult("unverified", "ode_blow_up", float(sol.t[-1]), q)
    return ExpMomentResult("finite", corners=q)
