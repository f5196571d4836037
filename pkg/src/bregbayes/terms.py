"""Building blocks for potentials.

A potential is the sum of a smooth term (value, gradient, Hessian action)
and an optional separable non-smooth term that exposes a proximal map and
its subdifferential as a box of intervals. All term methods act on the last
axis, so a stack of points of shape ``(N, n)`` evaluates in one call.
"""

from __future__ import annotations

import numpy as np

DOMAIN_TOL = 1e-12


# -- smooth terms -------------------------------------------------------------


class SmoothTerm:
    """Base class. Subclasses set ``lipschitz``, ``strong_convexity``."""

    lipschitz: float = np.inf
    strong_convexity: float = 0.0
    strictly_convex: bool = False
    c3: bool = True

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hvp(self, x, v):
        raise NotImplementedError

    def diag_hessian(self, x):
        """Diagonal of the Hessian for separable terms, else None."""
        return None

    def prox(self, u, gamma):
        """Closed-form prox, or None when the term has none."""
        return None


class Quadratic(SmoothTerm):
    """``0.5 (x - c)^T P (x - c)``; ``P`` is a diagonal vector or a matrix."""

    def __init__(self, precision, center):
        self.center = np.asarray(center, dtype=float)
        P = np.asarray(precision, dtype=float)
        if P.ndim == 0:
            P = np.full(self.center.shape, float(P))
        self.precision = P
        self.diagonal = P.ndim == 1
        eig = P if self.diagonal else np.linalg.eigvalsh(P)
        self.lipschitz = float(np.max(eig))
        self.strong_convexity = float(max(np.min(eig), 0.0))
        self.strictly_convex = self.strong_convexity > 0

    def _apply(self, v):
        return v * self.precision if self.diagonal else v @ self.precision

    def value(self, x):
        d = x - self.center
        return 0.5 * np.sum(d * self._apply(d), axis=-1)

    def grad(self, x):
        return self._apply(x - self.center)

    def hvp(self, x, v):
        return self._apply(np.asarray(v, dtype=float))

    def diag_hessian(self, x):
        if self.diagonal:
            return np.broadcast_to(self.precision, np.shape(x)).copy()
        return None

    def prox(self, u, gamma):
        if self.diagonal:
            return (self.precision * self.center + u / gamma) / (self.precision + 1.0 / gamma)
        n = self.center.size
        A = self.precision + np.eye(n) / gamma
        rhs = self.precision @ self.center + np.asarray(u) / gamma
        return np.linalg.solve(A, rhs.T).T


class LeastSquares(SmoothTerm):
    """``||y - A x||^2 / (2 sigma^2)``, the Gaussian likelihood term."""

    def __init__(self, A, y, sigma=1.0):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.y = np.asarray(y, dtype=float)
        self.sigma2 = float(sigma) ** 2
        self.gram = self.A.T @ self.A / self.sigma2
        eig = np.linalg.eigvalsh(self.gram)
        self.lipschitz = float(eig[-1])
        self.strong_convexity = float(max(eig[0], 0.0))
        self.strictly_convex = self.strong_convexity > 0

    def value(self, x):
        r = self.y - x @ self.A.T
        return 0.5 * np.sum(r * r, axis=-1) / self.sigma2

    def grad(self, x):
        r = x @ self.A.T - self.y
        return r @ self.A / self.sigma2

    def hvp(self, x, v):
        return np.asarray(v, dtype=float) @ self.gram


class Quartic(SmoothTerm):
    """``sum x_i^4``: strictly but not strongly convex."""

    strictly_convex = True

    def value(self, x):
        return np.sum(x**4, axis=-1)

    def grad(self, x):
        return 4.0 * x**3

    def hvp(self, x, v):
        return 12.0 * x**2 * v

    def diag_hessian(self, x):
        return 12.0 * np.asarray(x, dtype=float) ** 2


class ExpLinear(SmoothTerm):
    """``sum exp(x_i) - x_i``."""

    strictly_convex = True

    def value(self, x):
        return np.sum(np.exp(x) - x, axis=-1)

    def grad(self, x):
        return np.expm1(x)

    def hvp(self, x, v):
        return np.exp(x) * v

    def diag_hessian(self, x):
        return np.exp(np.asarray(x, dtype=float))


class Exponential(SmoothTerm):
    """``sum exp(x_i)``; only proper as a posterior on a bounded-below set."""

    strictly_convex = True

    def value(self, x):
        return np.sum(np.exp(x), axis=-1)

    def grad(self, x):
        return np.exp(x)

    def hvp(self, x, v):
        return np.exp(x) * v

    def diag_hessian(self, x):
        return np.exp(np.asarray(x, dtype=float))


class Linear(SmoothTerm):
    """``c^T x``."""

    lipschitz = 0.0

    def __init__(self, coef):
        self.coef = np.asarray(coef, dtype=float)

    def value(self, x):
        return np.sum(x * self.coef, axis=-1)

    def grad(self, x):
        return np.broadcast_to(self.coef, np.shape(x)).copy()

    def hvp(self, x, v):
        return np.zeros(np.shape(v))

    def diag_hessian(self, x):
        return np.zeros(np.shape(x))

    def prox(self, u, gamma):
        return u - gamma * self.coef


class SmoothSum(SmoothTerm):
    """Nonnegative combination ``sum_k w_k f_k``."""

    def __init__(self, terms, weights=None):
        self.terms = list(terms)
        self.weights = [1.0] * len(self.terms) if weights is None else [float(w) for w in weights]
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be nonnegative")
        self.lipschitz = float(sum(w * t.lipschitz for w, t in zip(self.weights, self.terms) if w > 0))
        self.strong_convexity = float(sum(w * t.strong_convexity for w, t in zip(self.weights, self.terms)))
        self.strictly_convex = self.strong_convexity > 0 or any(
            w > 0 and t.strictly_convex for w, t in zip(self.weights, self.terms)
        )
        self.c3 = all(t.c3 for t in self.terms)

    def value(self, x):
        return sum(w * t.value(x) for w, t in zip(self.weights, self.terms))

    def grad(self, x):
        return sum(w * t.grad(x) for w, t in zip(self.weights, self.terms))

    def hvp(self, x, v):
        return sum(w * t.hvp(x, v) for w, t in zip(self.weights, self.terms))

    def diag_hessian(self, x):
        parts = [t.diag_hessian(x) for t in self.terms]
        if any(p is None for p in parts):
            return None
        return sum(w * p for w, p in zip(self.weights, parts))


# -- domains and separable non-smooth terms -----------------------------------


class Domain:
    """Axis-aligned box ``lower <= x <= upper`` (infinite bounds allowed)."""

    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("empty domain")

    @classmethod
    def full(cls, n):
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def kind(self):
        if np.all(np.isinf(self.lower)) and np.all(np.isinf(self.upper)):
            return "R^n"
        if np.all(self.lower == 0) and np.all(np.isposinf(self.upper)):
            return "cone"
        return "box"

    @property
    def is_full(self):
        return self.kind == "R^n"

    @property
    def is_bounded(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        ok = (x >= self.lower - DOMAIN_TOL) & (x <= self.upper + DOMAIN_TOL)
        return np.all(ok, axis=-1)

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def initial_point(self):
        """Analytic center when bounded, else the projection of zero."""
        if self.is_bounded:
            return 0.5 * (self.lower + self.upper)
        return self.project(np.zeros(self.lower.shape))


class ProxTerm:
    """Separable non-smooth term with a closed-form prox."""

    domain: Domain | None = None

    def value(self, x):
        raise NotImplementedError

    def prox(self, u, gamma):
        raise NotImplementedError

    def subdiff(self, x):
        """Return ``(lo, hi)`` with ``partial g(x) = prod_i [lo_i, hi_i]``."""
        raise NotImplementedError


class L1Norm(ProxTerm):
    def __init__(self, weight=1.0):
        self.weight = float(weight)

    def value(self, x):
        return self.weight * np.sum(np.abs(x), axis=-1)

    def prox(self, u, gamma):
        t = gamma * self.weight
        return np.sign(u) * np.maximum(np.abs(u) - t, 0.0)

    def subdiff(self, x):
        s = self.weight * np.sign(x)
        kink = x == 0
        lo = np.where(kink, -self.weight, s)
        hi = np.where(kink, self.weight, s)
        return lo, hi


class BoxIndicator(ProxTerm):
    def __init__(self, domain: Domain):
        self.domain = domain

    def value(self, x):
        return np.where(self.domain.contains(x), 0.0, np.inf)

    def prox(self, u, gamma):
        return self.domain.project(u)

    def subdiff(self, x):
        at_lo = np.abs(x - self.domain.lower) <= DOMAIN_TOL
        at_hi = np.abs(x - self.domain.upper) <= DOMAIN_TOL
        lo = np.where(at_lo, -np.inf, 0.0)
        hi = np.where(at_hi, np.inf, 0.0)
        return lo, hi
