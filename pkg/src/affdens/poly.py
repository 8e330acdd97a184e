"""Sparse multivariate polynomials with float coefficients.

A :class:`Polynomial` maps multi-indices (tuples of nonnegative ints) to
real coefficients. Zero coefficients are never stored, so the zero
polynomial has an empty term map and degree ``-inf``.
"""
from __future__ import annotations

import itertools
import math
from typing import Iterable, Mapping

import numpy as np

MultiIndex = tuple


def graded_indices(d: int, k: int) -> list[tuple[int, ...]]:
    """All multi-indices of length ``d`` with ``|alpha| <= k``.

    Ordered by total degree, and within a degree by decreasing powers of
    the leading variables, e.g. ``1, v, x, v^2, vx, x^2`` for ``d=2``.
    """
    out = []
    for deg in range(k + 1):
        block = [a for a in itertools.product(range(deg, -1, -1), repeat=d) if sum(a) == deg]
        out.extend(sorted(block, reverse=True))
    return out


class Polynomial:
    """Immutable sparse polynomial in ``dim`` variables."""

    __slots__ = ("dim", "_terms")

    def __init__(self, dim: int, terms: Mapping[tuple, float] | None = None):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)
        clean = {}
        for k, c in (terms or {}).items():
            k = tuple(int(i) for i in k)
            if len(k) != dim or any(i < 0 for i in k):
                raise ValueError(f"bad multi-index {k} for dimension {dim}")
            c = float(c)
            if c != 0.0:
                clean[k] = clean.get(k, 0.0) + c
        self._terms = {k: c for k, c in clean.items() if c != 0.0}

    # constructors
    @classmethod
    def constant(cls, dim: int, c: float) -> "Polynomial":
        return cls(dim, {(0,) * dim: c})

    @classmethod
    def variable(cls, dim: int, i: int) -> "Polynomial":
        idx = [0] * dim
        idx[i] = 1
        return cls(dim, {tuple(idx): 1.0})

    @classmethod
    def monomial(cls, alpha: Iterable[int], c: float = 1.0) -> "Polynomial":
        alpha = tuple(alpha)
        return cls(len(alpha), {alpha: c})

    @classmethod
    def from_coeffs_1d(cls, coeffs: Iterable[float]) -> "Polynomial":
        """Univariate polynomial from ascending coefficients."""
        return cls(1, {(j,): c for j, c in enumerate(coeffs)})

    @property
    def terms(self) -> dict:
        return dict(self._terms)

    @property
    def degree(self) -> float:
        if not self._terms:
            return -math.inf
        return max(sum(k) for k in self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def coeff(self, alpha) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def _check(self, other: "Polynomial"):
        if not isinstance(other, Polynomial):
            raise TypeError("expected Polynomial")
        if other.dim != self.dim:
            raise ValueError(f"dimension mismatch: {self.dim} vs {other.dim}")

    def __add__(self, other):
        if np.isscalar(other):
            other = Polynomial.constant(self.dim, other)
        self._check(other)
        t = dict(self._terms)
        for k, c in other._terms.items():
            t[k] = t.get(k, 0.0) + c
        return Polynomial(self.dim, t)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if np.isscalar(other):
            other = Polynomial.constant(self.dim, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def scale(self, s: float) -> "Polynomial":
        return Polynomial(self.dim, {k: s * c for k, c in self._terms.items()})

    def __mul__(self, other):
        if np.isscalar(other):
            return self.scale(float(other))
        self._check(other)
        t: dict = {}
        for k1, c1 in self._terms.items():
            for k2, c2 in other._terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                t[k] = t.get(k, 0.0) + c1 * c2
        return Polynomial(self.dim, t)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.dim, 1.0)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.dim == other.dim and self._terms == other._terms

    def __hash__(self):
        return hash((self.dim, frozenset(self._terms.items())))

    def allclose(self, other: "Polynomial", rtol=1e-12, atol=0.0) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(math.isclose(self.coeff(k), other.coeff(k), rel_tol=rtol, abs_tol=atol) for k in keys)

    def __call__(self, x):
        return poly_eval(self, x)

    def __repr__(self):
        if not self._terms:
            return f"Polynomial(dim={self.dim}, 0)"
        parts = []
        for k in sorted(self._terms, key=lambda a: (sum(a), tuple(-i for i in a))):
            parts.append(f"{self._terms[k]:+.6g}*x^{k}")
        return f"Polynomial(dim={self.dim}, " + " ".join(parts) + ")"

    def derivative(self, i: int) -> "Polynomial":
        t = {}
        for k, c in self._terms.items():
            if k[i] > 0:
                kk = list(k)
                kk[i] -= 1
                t[tuple(kk)] = c * k[i]
        return Polynomial(self.dim, t)

    def compose_affine(self, A, b) -> "Polynomial":
        return poly_compose_affine(self, A, b)

    def expectation(self, moments: Mapping[tuple, float]) -> float:
        """Replace each monomial by its entry in ``moments``."""
        s = 0.0
        for k, c in self._terms.items():
            if k not in moments:
                raise KeyError(f"missing moment {k}")
            s += c * moments[k]
        return s

    def coeff_vector(self, basis: list) -> np.ndarray:
        pos = {k: i for i, k in enumerate(basis)}
        v = np.zeros(len(basis))
        for k, c in self._terms.items():
            if k not in pos:
                raise KeyError(f"monomial {k} outside basis")
            v[pos[k]] = c
        return v


def poly_arith(p: Polynomial, q, op: str) -> Polynomial:
    """Binary arithmetic by name: ``add``, ``sub``, ``mul`` or ``scale``."""
    if op == "add":
        return p + q
    if op == "sub":
        return p - q
    if op == "mul":
        return p * q
    if op == "scale":
        return p.scale(float(q))
    raise ValueError(f"unknown op {op!r}")


def poly_eval(p: Polynomial, x) -> np.ndarray | float:
    """Evaluate ``p`` at one point or an array of points.

    ``x`` has shape ``(d,)`` or ``(N, d)``; for ``d == 1`` a scalar or 1-d
    array of points is also accepted. Univariate polynomials use Horner's
    scheme, multivariate ones a table of powers.
    """
    x = np.asarray(x, dtype=float)
    d = p.dim
    scalar = False
    if d == 1:
        if x.ndim == 0:
            scalar = True
        elif x.ndim == 2:
            if x.shape[1] != 1:
                raise ValueError("dimension mismatch")
            x = x[:, 0]
        if p.is_zero():
            out = np.zeros_like(x)
        else:
            deg = int(p.degree)
            out = np.zeros_like(x) + p.coeff((deg,))
            for j in range(deg - 1, -1, -1):
                out = out * x + p.coeff((j,))
        return float(out) if scalar else out
    if x.ndim == 1:
        if x.shape[0] != d:
            raise ValueError(f"dimension mismatch: point has {x.shape[0]} entries, polynomial {d}")
        x = x[None, :]
        scalar = True
    elif x.ndim != 2 or x.shape[1] != d:
        raise ValueError("dimension mismatch")
    out = np.zeros(x.shape[0])
    if not p.is_zero():
        deg = int(p.degree)
        pows = x[:, :, None] ** np.arange(deg + 1)
        for k, c in p._terms.items():
            term = np.full(x.shape[0], c)
            for i, e in enumerate(k):
                if e:
                    term = term * pows[:, i, e]
            out += term
    return float(out[0]) if scalar else out


def poly_compose_affine(p: Polynomial, A, b) -> Polynomial:
    """Return ``q`` with ``q(x) = p(A x + b)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    d = p.dim
    if A.shape != (d, d) or b.shape != (d,):
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}, dim {d}")
    lin = []
    for i in range(d):
        t = {(0,) * d: b[i]}
        for j in range(d):
            e = [0] * d
            e[j] = 1
            t[tuple(e)] = t.get(tuple(e), 0.0) + A[i, j]
        lin.append(Polynomial(d, t))
    cache: dict = {}

    def power(i, e):
        if (i, e) not in cache:
            cache[(i, e)] = Polynomial.constant(d, 1.0) if e == 0 else power(i, e - 1) * lin[i]
        return cache[(i, e)]

    out = Polynomial(d)
    for k, c in p._terms.items():
        term = Polynomial.constant(d, c)
        for i, e in enumerate(k):
            if e:
                term = term * power(i, e)
        out = out + term
    return out


def collect_coefficients(p: Polynomial) -> dict:
    """Monomial coefficient map of ``p`` (empty for the zero polynomial)."""
    return p.terms
