"""Divergences and dual coordinates induced by a convex potential.

The Hessian of ``phi`` is used as a Riemannian metric. Along the straight
segment ``gamma_t = u + t (x - u)`` the canonical divergence
``int_0^1 t gamma'^T g(gamma_t) gamma' dt`` coincides with the Bregman
divergence; :func:`canonical_numeric` evaluates that integral by quadrature
so the two routes can be compared.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    ConvergenceError,
    DomainError,
    NonSmoothPointError,
    UnsupportedOperationError,
)
from .models import Potential

FORMS = ("bregman_primal", "bregman_dual", "generalized_dual", "canonical_numeric")


@dataclass(frozen=True)
class DivergenceValue:
    value: float
    form: str
    q: Optional[np.ndarray] = None
    quad_order: Optional[int] = None
    residual: Optional[float] = None

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class DualPoint:
    """Primal point, its dual coordinate and the conjugate value there."""

    x: np.ndarray
    eta: np.ndarray
    conjugate: float
    residual: float = 0.0


def _vec(potential, v):
    return potential._check(v)


def fd_step(x):
    return 1e-4 * (1.0 + np.linalg.norm(x))


def bregman(potential: Potential, u, x) -> DivergenceValue:
    """``phi(u) - phi(x) - grad phi(x)^T (u - x)``."""
    u, x = _vec(potential, u), _vec(potential, x)
    try:
        gx = potential.grad(x)
    except NonSmoothPointError as exc:
        raise NonSmoothPointError(
            "phi is not differentiable at x; use generalized_dual with an explicit subgradient"
        ) from exc
    if not np.all(potential.domain.contains(u)):
        raise DomainError("u outside the domain")
    val = potential.value(u) - potential.value(x) - np.sum(gx * (u - x), axis=-1)
    return DivergenceValue(float(max(val, 0.0)), "bregman_primal")


def dual_bregman(potential: Potential, u, x) -> DivergenceValue:
    """Dual divergence ``D*(u, x) = D(x, u)``."""
    val = bregman(potential, x, u).value
    return DivergenceValue(val, "bregman_dual")


def generalized_dual(potential: Potential, s, x, q, check: bool = True) -> DivergenceValue:
    """``phi(x) - phi(s) - q^T (x - s)`` with ``q`` a subgradient at ``s``.

    When ``check`` is set, the subgradient inequality at ``s`` is probed along
    a fixed set of directions and a warning is emitted if it fails.
    """
    s, x = _vec(potential, s), _vec(potential, x)
    q = _vec(potential, q)
    dom = potential.domain
    if not (np.all(dom.contains(s)) and np.all(dom.contains(x))):
        raise DomainError("s or x outside the domain")
    fs = potential.value(s)
    if check:
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((16, potential.dim))
        dirs *= np.repeat([1e-3, 1e-1, 1.0, 10.0], 4)[:, None]
        lhs = potential.value(s + dirs)
        rhs = fs + dirs @ q
        if np.any(lhs < rhs - 1e-9 * (1.0 + abs(fs))):
            warnings.warn("q does not look like a subgradient of phi at s", RuntimeWarning, stacklevel=2)
    val = potential.value(x) - fs - q @ (x - s)
    return DivergenceValue(float(max(val, 0.0)), "generalized_dual", q=q)


def _gauss_legendre(potential, u, d, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    pts = u + t[:, None] * d
    hd = potential.hvp(pts, np.broadcast_to(d, pts.shape))
    integrand = t * np.sum(hd * d, axis=-1)
    return float(np.dot(w, integrand))


def canonical_numeric(potential: Potential, u, x, quad_order: int = 30) -> DivergenceValue:
    """Quadrature of the geodesic integral from ``u`` to ``x``.

    The residual is the gap to the same rule at twice the order.
    """
    if not potential.has_hessian:
        raise UnsupportedOperationError("canonical divergence needs a Hessian oracle")
    u, x = _vec(potential, u), _vec(potential, x)
    d = x - u
    val = _gauss_legendre(potential, u, d, quad_order)
    fine = _gauss_legendre(potential, u, d, 2 * quad_order)
    return DivergenceValue(val, "canonical_numeric", quad_order=quad_order, residual=abs(fine - val))


def metric(potential: Potential, x) -> np.ndarray:
    """The Hessian of ``phi`` at ``x`` as a dense symmetric matrix."""
    return potential.hessian(_vec(potential, x))


def _descent_direction(potential, x, g):
    d = potential.smooth.diag_hessian(x) if potential.smooth is not None else None
    if d is not None:
        ok = d > 1e-300
        return np.where(ok, g / np.where(ok, d, 1.0), g)
    H = potential.hessian(x)
    try:
        c = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return g
    return np.linalg.solve(c.T, np.linalg.solve(c, g))


def legendre(potential: Potential, eta, budget: int = 200, tol: float = 1e-10, x0=None) -> DualPoint:
    """Convex conjugate ``phi*(eta) = max_x x^T eta - phi(x)`` by damped Newton.

    Stops once ``||grad phi(x) - eta|| <= tol (1 + ||eta||)``.
    """
    if potential.nonsmooth is not None:
        raise UnsupportedOperationError("legendre transform implemented for smooth potentials")
    eta = _vec(potential, eta)
    x = np.zeros(potential.dim) if x0 is None else _vec(potential, x0).copy()
    psi = lambda z: potential.value(z) - z @ eta
    thresh = tol * (1.0 + np.linalg.norm(eta))
    res = np.inf
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(budget):
            g = potential.grad(x) - eta
            res = np.linalg.norm(g)
            if res <= thresh:
                return DualPoint(x, eta, float(x @ eta - potential.value(x)), float(res))
            step = _descent_direction(potential, x, g)
            if not np.all(np.isfinite(step)) or g @ step <= 0:
                step = g
            f0, t = psi(x), 1.0
            while t > 1e-16:
                cand = x - t * step
                fc = psi(cand)
                if np.isfinite(fc) and fc <= f0 - 1e-4 * t * (g @ step):
                    break
                # near a flat minimum psi stops resolving progress; fall back
                # to the gradient residual as merit
                if np.isfinite(fc) and np.linalg.norm(potential.grad(cand) - eta) <= (1 - 1e-4 * t) * res:
                    break
                t *= 0.5
            else:
                break
            x = cand
    raise ConvergenceError("legendre inner solve did not converge", float(res))


def conjugate_gradient(potential: Potential, eta, **kw) -> np.ndarray:
    """``grad phi*(eta)``, i.e. the primal point with dual coordinate ``eta``."""
    return legendre(potential, eta, **kw).x


def fenchel_young_form(potential: Potential, u, x) -> float:
    """``phi(u) + phi*(eta_x) - u^T eta_x`` with ``eta_x = grad phi(x)``."""
    u, x = _vec(potential, u), _vec(potential, x)
    eta = potential.grad(x)
    dp = legendre(potential, eta, x0=x)
    return float(potential.value(u) + dp.conjugate - u @ eta)


def biconjugate(potential: Potential, x, budget: int = 100, tol: float = 1e-8) -> float:
    """``phi**(x) = max_eta eta^T x - phi*(eta)``, each ``phi*`` by :func:`legendre`.

    Newton ascent in the dual: the gradient is ``x - x_eta`` and the Hessian
    ``-g(x_eta)^{-1}``, so the step is ``g(x_eta) (x - x_eta)``. The outer
    tolerance sits above the inner one, which limits how well ``x_eta`` is
    resolved; the value error is quadratic in the remaining gap.
    """
    x = _vec(potential, x)
    eta = np.zeros(potential.dim)
    xe = None

    def dual_obj(e, start):
        dp = legendre(potential, e, x0=start)
        return e @ x - dp.conjugate, dp.x

    val, xe = dual_obj(eta, xe)
    res = np.inf
    for _ in range(budget):
        gap = x - xe
        res = np.linalg.norm(gap)
        if res <= tol * (1.0 + np.linalg.norm(x)):
            return float(val)
        step = metric(potential, xe) @ gap
        if not np.any(step) or gap @ step <= 0:
            step = gap
        t = 1.0
        while t > 1e-16:
            try:
                cand_val, cand_x = dual_obj(eta + t * step, xe)
            except ConvergenceError:
                cand_val = -np.inf
            if cand_val >= val + 1e-4 * t * (gap @ step) - 1e-15 * abs(val):
                break
            t *= 0.5
        eta, val, xe = eta + t * step, cand_val, cand_x
    raise ConvergenceError("biconjugate outer solve did not converge", float(res))


def dual_metric(potential: Potential, x, fd_step_size: Optional[float] = None) -> np.ndarray:
    """Hessian of ``phi*`` at ``eta_x``, by central differences of the conjugate map."""
    x = _vec(potential, x)
    eta = potential.grad(x)
    h = fd_step(eta) if fd_step_size is None else fd_step_size
    cols = []
    for e in np.eye(potential.dim):
        hi = legendre(potential, eta + h * e, x0=x).x
        lo = legendre(potential, eta - h * e, x0=x).x
        cols.append((hi - lo) / (2 * h))
    G = np.stack(cols, axis=-1)
    return 0.5 * (G + G.T)


def dual_metric_check(potential: Potential, x, fd_step_size: Optional[float] = None) -> float:
    """``max |g*(eta_x) g(x) - I|``; zero when the two metrics are inverse."""
    x = _vec(potential, x)
    prod = dual_metric(potential, x, fd_step_size) @ metric(potential, x)
    return float(np.max(np.abs(prod - np.eye(potential.dim))))


def induced_metric(potential: Potential, x, h: Optional[float] = None) -> np.ndarray:
    """Second derivative of ``u -> D(u, x)`` at ``u = x`` by central differences."""
    x = _vec(potential, x)
    h = fd_step(x) if h is None else h
    n = potential.dim
    D = lambda u: bregman(potential, u, x).value
    E = np.eye(n) * h
    G = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            G[i, j] = (
                D(x + E[i] + E[j]) - D(x + E[i] - E[j]) - D(x - E[i] + E[j]) + D(x - E[i] - E[j])
            ) / (4 * h * h)
    return 0.5 * (G + G.T)


def divergence(potential: Potential, form: str, u, x, q=None, quad_order: int = 30) -> DivergenceValue:
    """Dispatch on ``form`` (one of :data:`FORMS`)."""
    if form == "bregman_primal":
        return bregman(potential, u, x)
    if form == "bregman_dual":
        return dual_bregman(potential, u, x)
    if form == "generalized_dual":
        q = potential.subgrad(u) if q is None else q
        return generalized_dual(potential, u, x, q)
    if form == "canonical_numeric":
        return canonical_numeric(potential, u, x, quad_order)
    raise ValueError(f"unknown divergence form {form!r}")
