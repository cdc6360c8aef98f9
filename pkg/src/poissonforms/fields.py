"""Test-function families on the base space.

The Euclidean family is spanned by polynomial-times-Gaussian atoms

    f(x) = sum_alpha c_alpha (x - c)^alpha * exp(-a |x - c|^2 / 2),

which is closed under partial derivatives and products, so every derivative
an operator check needs is exact (gradients, Hessians, and anything nested).
Compactly supported mollifier bumps are provided for the checks that want
genuinely compact support; they expose value/gradient/Hessian analytically.

On the sphere, fields of the form g(<p, u>) for a polynomial profile g have
closed-form tangential gradients and Laplace-Beltrami images, which is all
the scalar-level checks need; form fields on the sphere are handled by
finite differences in the operators module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exterior import Multivector

__all__ = [
    "Field",
    "polygauss",
    "monomial",
    "gauss_bump",
    "RadialBump",
    "SphereAxisField",
    "VectorField",
    "SphereKilling",
    "SphereGradientField",
    "PointForm",
]


def _shift_poly(terms: dict, old: np.ndarray, new: np.ndarray) -> dict:
    """Re-center a polynomial written in powers of (x - old) to powers of
    (x - new): since (x - old) = (x - new) + (new - old), expand each factor
    binomially in (x - new)."""
    d = len(old)
    out: dict = {}
    for alpha, c in terms.items():
        partial = {tuple([0] * d): c}
        for i in range(d):
            shift = float(new[i] - old[i])
            grown: dict = {}
            ai = alpha[i]
            for beta, cb in partial.items():
                for k in range(ai + 1):
                    coeff = cb * math.comb(ai, k) * shift ** (ai - k)
                    if coeff == 0.0:
                        continue
                    nb = list(beta)
                    nb[i] = beta[i] + k
                    key = tuple(nb)
                    grown[key] = grown.get(key, 0.0) + coeff
            partial = grown
        for beta, cb in partial.items():
            out[beta] = out.get(beta, 0.0) + cb
    return {k: v for k, v in out.items() if v != 0.0}


@dataclass(frozen=True)
class _Atom:
    """One polynomial-times-Gaussian atom. terms maps multi-indices to
    coefficients; rate is the Gaussian decay rate a; center the Gaussian
    center."""

    terms: tuple  # tuple of (alpha, coeff)
    rate: float
    center: tuple

    def value_one(self, x: Sequence[float]) -> float:
        dx = [x[i] - self.center[i] for i in range(len(self.center))]
        if self.rate != 0.0:
            e = math.exp(-0.5 * self.rate * sum(t * t for t in dx))
        else:
            e = 1.0
        tot = 0.0
        for alpha, c in self.terms:
            v = c
            for i, ai in enumerate(alpha):
                if ai:
                    v *= dx[i] ** ai
            tot += v
        return tot * e

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        dX = X - np.asarray(self.center)
        if self.rate != 0.0:
            e = np.exp(-0.5 * self.rate * np.sum(dX**2, axis=-1))
        else:
            e = np.ones(X.shape[0])
        tot = np.zeros(X.shape[0])
        for alpha, c in self.terms:
            v = np.full(X.shape[0], c)
            for i, ai in enumerate(alpha):
                if ai:
                    v = v * dX[:, i] ** ai
            tot += v
        return tot * e

    def partial(self, axis: int) -> "_Atom":
        out: dict = {}
        for alpha, c in self.terms:
            ai = alpha[axis]
            if ai > 0:
                down = list(alpha)
                down[axis] -= 1
                key = tuple(down)
                out[key] = out.get(key, 0.0) + c * ai
            if self.rate != 0.0:
                up = list(alpha)
                up[axis] += 1
                key = tuple(up)
                out[key] = out.get(key, 0.0) - c * self.rate
        return _Atom(tuple(out.items()), self.rate, self.center)

    def mul(self, other: "_Atom") -> "_Atom":
        a1, a2 = self.rate, other.rate
        c1 = np.asarray(self.center)
        c2 = np.asarray(other.center)
        a3 = a1 + a2
        if a3 > 0.0:
            r = (a1 * c1 + a2 * c2) / a3
            logK = -0.5 * (
                a1 * float(c1 @ c1) + a2 * float(c2 @ c2) - a3 * float(r @ r)
            )
            K = math.exp(logK)
        else:
            r = c1
            K = 1.0
        t1 = _shift_poly(dict(self.terms), c1, r)
        t2 = _shift_poly(dict(other.terms), c2, r)
        prod: dict = {}
        for al, ca in t1.items():
            for be, cb in t2.items():
                key = tuple(a + b for a, b in zip(al, be))
                prod[key] = prod.get(key, 0.0) + ca * cb * K
        return _Atom(tuple(prod.items()), a3, tuple(float(v) for v in r))


class Field:
    """Finite sum of polynomial-Gaussian atoms; exact under differentiation
    and multiplication."""

    __slots__ = ("atoms", "dim", "_grad_cache", "_hess_cache")

    def __init__(self, atoms: Iterable[_Atom], dim: int):
        self.atoms = tuple(atoms)
        self.dim = dim
        self._grad_cache = None
        self._hess_cache = None

    # -- evaluation -----------------------------------------------------------

    def value_one(self, x) -> float:
        return sum(a.value_one(x) for a in self.atoms)

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for a in self.atoms:
            out += a.value_batch(X)
        return out

    # -- calculus -------------------------------------------------------------

    def partial(self, axis: int) -> "Field":
        return Field((a.partial(axis) for a in self.atoms), self.dim)

    def _grads(self) -> tuple["Field", ...]:
        if self._grad_cache is None:
            self._grad_cache = tuple(self.partial(a) for a in range(self.dim))
        return self._grad_cache

    def _hessians(self) -> tuple[tuple["Field", ...], ...]:
        if self._hess_cache is None:
            g = self._grads()
            self._hess_cache = tuple(
                tuple(g[a].partial(b) for b in range(self.dim))
                for a in range(self.dim)
            )
        return self._hess_cache

    def grad_one(self, x) -> np.ndarray:
        return np.array([g.value_one(x) for g in self._grads()])

    def hess_one(self, x) -> np.ndarray:
        H = self._hessians()
        return np.array(
            [[H[a][b].value_one(x) for b in range(self.dim)] for a in range(self.dim)]
        )

    def grad_batch(self, X: np.ndarray) -> np.ndarray:
        return np.stack([g.value_batch(X) for g in self._grads()], axis=-1)

    def laplacian(self) -> "Field":
        out = Field([], self.dim)
        for a in range(self.dim):
            out = out + self.partial(a).partial(a)
        return out

    # -- algebra ----------------------------------------------------------------

    def __add__(self, other: "Field") -> "Field":
        return Field(self.atoms + other.atoms, self.dim)

    def __mul__(self, other):
        if isinstance(other, Field):
            return Field(
                [a.mul(b) for a in self.atoms for b in other.atoms], self.dim
            )
        out = []
        for a in self.atoms:
            out.append(_Atom(tuple((al, c * other) for al, c in a.terms), a.rate, a.center))
        return Field(out, self.dim)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other: "Field") -> "Field":
        return self + (other * -1.0)

    def sup_bound(self, probe: np.ndarray) -> float:
        """Crude sup-norm estimate from a probe grid (used by series tail
        envelopes; callers pad the result)."""
        return float(np.max(np.abs(self.value_batch(probe))))


def polygauss(
    dim: int,
    terms: dict,
    rate: float = 1.0,
    center: Sequence[float] | None = None,
) -> Field:
    """Build a Field from {multi-index: coeff}, decay rate, and center."""
    c = tuple(center) if center is not None else (0.0,) * dim
    clean = {tuple(k): float(v) for k, v in terms.items()}
    return Field([_Atom(tuple(clean.items()), float(rate), c)], dim)


def monomial(dim: int, powers: Sequence[int], coeff: float = 1.0) -> Field:
    return polygauss(dim, {tuple(powers): coeff}, rate=0.0)


def gauss_bump(dim: int, rate: float, center: Sequence[float], amplitude: float = 1.0) -> Field:
    return polygauss(dim, {(0,) * dim: amplitude}, rate=rate, center=center)


class RadialBump:
    """Smooth compactly supported mollifier A exp(1 - 1/(1 - s)), s = |x-c|^2/R^2.

    Exposes value/gradient/Hessian; it is not in the polynomial-Gaussian
    algebra, so it only joins batteries that need at most two derivatives.
    """

    def __init__(self, center: Sequence[float], radius: float, amplitude: float = 1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        self.dim = len(self.center)

    def _s(self, x) -> float:
        dx = np.asarray(x, dtype=float) - self.center
        return float(dx @ dx) / self.radius**2

    def value_one(self, x) -> float:
        s = self._s(x)
        if s >= 1.0 - 1e-12:
            return 0.0
        return self.amplitude * math.exp(1.0 - 1.0 / (1.0 - s))

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        dX = X - self.center
        s = np.sum(dX**2, axis=-1) / self.radius**2
        out = np.zeros(X.shape[0])
        ok = s < 1.0 - 1e-12
        out[ok] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - s[ok]))
        return out

    def grad_one(self, x) -> np.ndarray:
        s = self._s(x)
        if s >= 1.0 - 1e-12:
            return np.zeros(self.dim)
        h = self.amplitude * math.exp(1.0 - 1.0 / (1.0 - s))
        hp = -h / (1.0 - s) ** 2
        dx = np.asarray(x, dtype=float) - self.center
        return hp * (2.0 / self.radius**2) * dx

    def hess_one(self, x) -> np.ndarray:
        s = self._s(x)
        if s >= 1.0 - 1e-12:
            return np.zeros((self.dim, self.dim))
        h = self.amplitude * math.exp(1.0 - 1.0 / (1.0 - s))
        hp = -h / (1.0 - s) ** 2
        hpp = h / (1.0 - s) ** 4 - 2.0 * h / (1.0 - s) ** 3
        dx = np.asarray(x, dtype=float) - self.center
        c2 = 2.0 / self.radius**2
        return hpp * c2**2 * np.outer(dx, dx) + hp * c2 * np.eye(self.dim)

    def laplacian_one(self, x) -> float:
        return float(np.trace(self.hess_one(x)))


class SphereAxisField:
    """g(<p, u>) on S^2 for a polynomial profile g and unit axis u; the
    tangential gradient and Laplace-Beltrami image are closed-form."""

    def __init__(self, axis: Sequence[float], coeffs: Sequence[float]):
        u = np.asarray(axis, dtype=float)
        self.axis = u / np.linalg.norm(u)
        self.g = np.polynomial.Polynomial(list(coeffs))
        self.dg = self.g.deriv()
        self.d2g = self.dg.deriv()

    def value_one(self, p) -> float:
        return float(self.g(float(np.asarray(p) @ self.axis)))

    def value_batch(self, P: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(P) @ self.axis
        return self.g(t)

    def grad_one(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        t = float(p @ self.axis)
        return float(self.dg(t)) * (self.axis - t * p)

    def laplacian_one(self, p) -> float:
        t = float(np.asarray(p) @ self.axis)
        return float((1.0 - t * t) * self.d2g(t) - 2.0 * t * self.dg(t))


class VectorField:
    """Euclidean vector field with polynomial-Gaussian components."""

    def __init__(self, components: Sequence[Field]):
        self.components = tuple(components)
        self.dim = components[0].dim

    def value_one(self, x) -> np.ndarray:
        return np.array([c.value_one(x) for c in self.components])

    def value_batch(self, X: np.ndarray) -> np.ndarray:
        return np.stack([c.value_batch(X) for c in self.components], axis=-1)

    def div_one(self, x) -> float:
        return sum(
            c.partial(a).value_one(x) for a, c in enumerate(self.components)
        )

    def div_batch(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(np.atleast_2d(X).shape[0])
        for a, c in enumerate(self.components):
            out += c.partial(a).value_batch(X)
        return out


class SphereKilling:
    """Rotation field p -> u x p; divergence-free, flow preserves the
    uniform measure."""

    def __init__(self, axis: Sequence[float]):
        u = np.asarray(axis, dtype=float)
        self.axis = u / np.linalg.norm(u)

    def value_one(self, p) -> np.ndarray:
        return np.cross(self.axis, np.asarray(p, dtype=float))

    def div_one(self, p) -> float:
        return 0.0


class SphereGradientField:
    """Gradient field of a SphereAxisField; divergence is its Laplacian."""

    def __init__(self, scalar: SphereAxisField):
        self.scalar = scalar

    def value_one(self, p) -> np.ndarray:
        return self.scalar.grad_one(p)

    def div_one(self, p) -> float:
        return self.scalar.laplacian_one(p)


class PointForm:
    """Single-slot n-form field on Euclidean space: a sum of terms
    coefficient-Field times a fixed frame wedge pattern."""

    def __init__(self, dim: int, terms: Sequence[tuple[Field, tuple[int, ...]]]):
        self.dim = dim
        self.terms = tuple(terms)

    def value_one(self, x, slot: int = 0) -> Multivector:
        out = Multivector()
        for f, axes in self.terms:
            c = f.value_one(x)
            if c != 0.0:
                out = out + c * Multivector.basis(axes, slot)
        return out

    def degree(self) -> int:
        degs = {len(axes) for _, axes in self.terms}
        if len(degs) != 1:
            raise ValueError("mixed-degree point form")
        return degs.pop()
