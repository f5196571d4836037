"""Potential oracles and a zoo of log-concave models.

A model is described by its potential ``phi``, the negative log posterior
density up to an additive constant, so that ``p(x) ~ exp(-phi(x))``.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, stats

from .errors import (
    ConvergenceError,
    DomainError,
    InvalidArgumentError,
    NonSmoothPointError,
    UnsupportedOperationError,
)
from .terms import (
    BoxIndicator,
    Domain,
    Exponential,
    ExpLinear,
    L1Norm,
    LeastSquares,
    Linear,
    ProxTerm,
    Quadratic,
    Quartic,
    SmoothSum,
    SmoothTerm,
)


@dataclass(frozen=True)
class Potential:
    """Oracle bundle for a convex potential ``phi = smooth + nonsmooth``.

    ``nonsmooth`` is a separable term with a closed-form prox (an l1 penalty
    or a box/cone indicator). Values outside the domain are ``+inf``.
    Subgradients use the minimum-norm element of the subdifferential.
    Models without a closed-form prox fall back to an inner solve to
    ``prox_tol``; set ``prox_max_iter=0`` to forbid the fallback.
    """

    dim: int
    smooth: Optional[SmoothTerm] = None
    nonsmooth: Optional[ProxTerm] = None
    prox_tol: float = 1e-10
    prox_max_iter: int = 1000

    # -- descriptors ----------------------------------------------------------

    @property
    def domain(self) -> Domain:
        dom = getattr(self.nonsmooth, "domain", None)
        return dom if dom is not None else Domain.full(self.dim)

    @property
    def constrained(self) -> bool:
        return not self.domain.is_full

    @property
    def smoothness(self) -> str:
        if self.nonsmooth is not None:
            return "nonsmooth"
        if self.smooth is None or self.smooth.c3:
            return "C3"
        return "C1"

    @property
    def strong_convexity(self) -> float:
        return 0.0 if self.smooth is None else self.smooth.strong_convexity

    @property
    def strictly_convex(self) -> bool:
        return self.smooth is not None and (self.smooth.strictly_convex or self.smooth.strong_convexity > 0)

    @property
    def smooth_lipschitz(self) -> float:
        """Gradient-Lipschitz constant of the smooth part alone."""
        return 0.0 if self.smooth is None else self.smooth.lipschitz

    @property
    def lipschitz(self) -> float:
        return self.smooth_lipschitz if self.nonsmooth is None else np.inf

    @property
    def has_hessian(self) -> bool:
        return self.smooth is not None

    # -- oracles --------------------------------------------------------------

    def _check(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim:
            raise InvalidArgumentError(f"expected last dimension {self.dim}, got shape {x.shape}")
        return x

    def _require_domain(self, x):
        if not np.all(self.domain.contains(x)):
            raise DomainError("point outside the domain of the potential")

    def value(self, x):
        x = self._check(x)
        inside = self.domain.contains(x)
        out = np.zeros(x.shape[:-1])
        if self.smooth is not None:
            with np.errstate(over="ignore", invalid="ignore"):
                out = out + self.smooth.value(x)
        if self.nonsmooth is not None and self.nonsmooth.domain is None:
            out = out + self.nonsmooth.value(x)
        out = np.where(inside, out, np.inf)
        return out[()] if out.ndim == 0 else out

    def smooth_grad(self, x):
        x = self._check(x)
        if self.smooth is None:
            return np.zeros_like(x)
        return self.smooth.grad(x)

    def grad(self, x):
        x = self._check(x)
        self._require_domain(x)
        g = self.smooth_grad(x)
        if self.nonsmooth is not None:
            lo, hi = self.nonsmooth.subdiff(x)
            if np.any(lo != hi):
                raise NonSmoothPointError("potential is not differentiable at this point")
            g = g + lo
        return g

    def subgrad(self, x):
        x = self._check(x)
        self._require_domain(x)
        a = self.smooth_grad(x)
        if self.nonsmooth is None:
            return a
        lo, hi = self.nonsmooth.subdiff(x)
        return a + np.clip(-a, lo, hi)

    def hvp(self, x, v):
        x = self._check(x)
        if self.smooth is None:
            if self.nonsmooth is None:
                return np.zeros_like(x)
            raise UnsupportedOperationError("no Hessian oracle for a purely non-smooth potential")
        if self.nonsmooth is not None:
            self._require_domain(x)
            lo, hi = self.nonsmooth.subdiff(x)
            if np.any(lo != hi):
                raise NonSmoothPointError("Hessian requested at a non-smooth point")
        return self.smooth.hvp(x, np.asarray(v, dtype=float))

    def hessian(self, x):
        """Dense Hessian of a single point, assembled column by column."""
        x = self._check(x)
        cols = [self.hvp(x, e) for e in np.eye(self.dim)]
        H = np.stack(cols, axis=-1)
        return 0.5 * (H + H.T)

    def prox(self, u, gamma):
        """``argmin_v phi(v) + ||v - u||^2 / (2 gamma)``."""
        if not gamma > 0:
            raise InvalidArgumentError("prox step must be positive")
        u = self._check(u)
        f, g = self.smooth, self.nonsmooth
        if f is None:
            return u.copy() if g is None else g.prox(u, gamma)
        if g is None:
            closed = f.prox(u, gamma)
            if closed is not None:
                return closed
            return self._prox_newton(u, gamma)
        if isinstance(f, Linear):
            return g.prox(u - gamma * f.coef, gamma)
        if isinstance(f, Quadratic) and f.diagonal:
            a = f.precision + 1.0 / gamma
            return g.prox((f.precision * f.center + u / gamma) / a, 1.0 / a)
        if isinstance(g, BoxIndicator) and f.diag_hessian(u) is not None:
            # separable: the constrained minimiser is the clipped free one
            free = f.prox(u, gamma)
            if free is None:
                free = self._prox_newton(u, gamma)
            return g.domain.project(free)
        return self._prox_composite(u, gamma)

    def _prox_newton(self, u, gamma):
        if self.prox_max_iter <= 0:
            raise UnsupportedOperationError("no closed-form prox and no fallback budget")
        f = self.smooth
        v = u.copy()
        obj = lambda z: f.value(z) + np.sum((z - u) ** 2, axis=-1) / (2 * gamma)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(self.prox_max_iter):
                r = gamma * f.grad(v) + (v - u)
                if np.max(np.abs(r)) <= self.prox_tol * (1.0 + np.max(np.abs(v))):
                    return v
                d = f.diag_hessian(v)
                if d is not None:
                    step = r / (gamma * d + 1.0)
                else:
                    H = gamma * np.stack([f.hvp(v, e) for e in np.eye(self.dim)], axis=-1)
                    step = np.linalg.solve(H + np.eye(self.dim), r)
                t, f0 = 1.0, obj(v)
                while t > 1e-12:
                    cand = v - t * step
                    if np.all(obj(cand) <= f0 + 1e-14 * (1 + np.abs(f0))):
                        break
                    t *= 0.5
                v = cand
        raise ConvergenceError("prox inner Newton solve did not converge", float(np.max(np.abs(r))))

    def _prox_composite(self, u, gamma):
        # proximal gradient on f(v) + |v-u|^2/(2 gamma) + g(v); strongly convex
        if self.prox_max_iter <= 0:
            raise UnsupportedOperationError("no closed-form prox and no fallback budget")
        f, g = self.smooth, self.nonsmooth
        h = lambda z: f.value(z) + np.sum((z - u) ** 2, axis=-1) / (2 * gamma)
        dh = lambda z: f.grad(z) + (z - u) / gamma
        v = g.prox(u, gamma)
        step = 1.0 / (f.lipschitz + 1.0 / gamma) if np.isfinite(f.lipschitz) else gamma
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(50 * self.prox_max_iter):
                grad = dh(v)
                while True:
                    nv = g.prox(v - step * grad, step)
                    d = nv - v
                    if h(nv) <= h(v) + grad @ d + d @ d / (2 * step) + 1e-15 * abs(h(v)):
                        break
                    step *= 0.5
                res = np.linalg.norm(d) / step
                v = nv
                if res * gamma <= self.prox_tol * (1.0 + np.linalg.norm(v)):
                    return v
                step *= 1.25
        raise ConvergenceError("prox inner solve did not converge", float(res))

    def tilt(self, coef) -> "Potential":
        """Return ``phi(u) - coef^T u`` with the same non-smooth part."""
        lin = Linear(-np.asarray(coef, dtype=float))
        smooth = lin if self.smooth is None else SmoothSum([self.smooth, lin])
        return Potential(self.dim, smooth, self.nonsmooth, self.prox_tol, self.prox_max_iter)


def combine(pairs) -> Potential:
    """``sum_k w_k phi_k`` for smooth potentials given as ``(w, phi)`` pairs."""
    pairs = list(pairs)
    dims = {p.dim for _, p in pairs}
    if len(dims) != 1:
        raise InvalidArgumentError("potentials must share a dimension")
    if any(p.nonsmooth is not None for _, p in pairs):
        raise UnsupportedOperationError("combine supports smooth potentials only")
    return Potential(dims.pop(), SmoothSum([p.smooth for _, p in pairs], [w for w, _ in pairs]))


# -- model instances ----------------------------------------------------------


Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class ModelInstance:
    """A potential plus an exact sampler and closed-form reference values.

    ``expected_gap`` is ``E[phi(x)] - phi(x_map)``; ``expected_score`` is
    ``E[grad phi(x)]`` (zero for smooth unconstrained models);
    ``shifted_map`` is the minimiser of ``phi(u) - u^T E[grad phi]`` over the
    domain. ``sampler`` is None when the model requires MCMC.
    """

    name: str
    potential: Potential
    params: dict = field(default_factory=dict)
    sampler: Optional[Sampler] = None
    true_map: Optional[np.ndarray] = None
    true_mean: Optional[np.ndarray] = None
    expected_gap: Optional[float] = None
    expected_score: Optional[np.ndarray] = None
    shifted_map: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return self.potential.dim

    @property
    def requires_mcmc(self) -> bool:
        return self.sampler is None


# Oracle-style free functions mirroring the Potential methods.


def evaluate(potential: Potential, x):
    return potential.value(x)


def grad(potential: Potential, x):
    return potential.grad(x)


def subgrad(potential: Potential, x):
    return potential.subgrad(x)


def prox(potential: Potential, u, gamma):
    return potential.prox(u, gamma)


# -- zoo ----------------------------------------------------------------------


def _vec(v, n=None, name="value"):
    a = np.atleast_1d(np.asarray(v, dtype=float))
    if n is not None and a.size == 1 and n > 1:
        a = np.full(n, float(a[0]))
    if n is not None and a.size != n:
        raise InvalidArgumentError(f"{name} must have length {n}")
    return a


def _dim(params, *keys, default=1):
    for k in keys:
        if k in params and np.ndim(params[k]) > 0:
            return len(np.atleast_1d(params[k]))
    n = int(params.get("n", default))
    if n < 1:
        raise InvalidArgumentError("n must be a positive integer")
    return n


def _gaussian_from_precision(name, params, mean, precision, smooth=None):
    n = mean.size
    P = np.asarray(precision, dtype=float)
    if P.ndim == 1:
        sd = 1.0 / np.sqrt(P)

        def sampler(rng, size):
            return mean + sd * rng.standard_normal((size, n))

    else:
        chol = np.linalg.cholesky(P)

        def sampler(rng, size):
            z = rng.standard_normal((size, n))
            return mean + np.linalg.solve(chol.T, z.T).T

    smooth = Quadratic(P, mean) if smooth is None else smooth
    return ModelInstance(
        name,
        Potential(n, smooth),
        params,
        sampler,
        true_map=mean.copy(),
        true_mean=mean.copy(),
        expected_gap=n / 2.0,
        expected_score=np.zeros(n),
    )


def _gaussian(p):
    n = _dim(p, "mu", "cov", default=1)
    mu = _vec(p.get("mu", 0.0), n, "mu")
    cov = np.asarray(p.get("cov", 1.0), dtype=float)
    if cov.ndim == 0:
        precision = np.full(n, 1.0 / cov)
    elif cov.ndim == 1:
        precision = 1.0 / _vec(cov, n, "cov")
    else:
        if cov.shape != (n, n):
            raise InvalidArgumentError(f"cov must be {n}x{n}")
        precision = np.linalg.inv(cov)
        precision = 0.5 * (precision + precision.T)
    return _gaussian_from_precision("gaussian", p, mu, precision)


def _gaussian_linear(p):
    n = _dim(p, "y", default=2)
    A = np.asarray(p.get("A", np.eye(n)), dtype=float)
    A = np.atleast_2d(A)
    n = A.shape[1]
    y = _vec(p.get("y", 1.0), A.shape[0], "y")
    sigma = float(p.get("sigma", 1.0))
    tau = float(p.get("prior_precision", 1.0))
    lik = LeastSquares(A, y, sigma)
    prior = Quadratic(np.full(n, tau), np.zeros(n))
    P = lik.gram + tau * np.eye(n)
    mean = np.linalg.solve(P, A.T @ y / sigma**2)
    return _gaussian_from_precision("gaussian_linear", p, mean, P, SmoothSum([lik, prior]))


def _laplace_iid(p):
    n = _dim(p)
    b = float(p.get("scale", 1.0))

    def sampler(rng, size):
        return rng.laplace(0.0, b, size=(size, n))

    return ModelInstance(
        "laplace_iid",
        Potential(n, None, L1Norm(1.0 / b)),
        p,
        sampler,
        true_map=np.zeros(n),
        true_mean=np.zeros(n),
        expected_gap=float(n),
    )


def _lasso_1d(p):
    y = float(p.get("y", 2.0))
    lam = float(p.get("lam", 1.0))
    s2 = float(p.get("sigma", 1.0)) ** 2
    s = np.sqrt(s2)
    # posterior is a two-piece mixture of truncated normals
    mp, mn = y - lam * s2, y + lam * s2
    logw = np.array(
        [
            (mp**2 - y**2) / (2 * s2) + stats.norm.logcdf(mp / s),
            (mn**2 - y**2) / (2 * s2) + stats.norm.logcdf(-mn / s),
        ]
    )
    w = np.exp(logw - logw.max())
    w_pos = w[0] / w.sum()
    pos = stats.truncnorm(-mp / s, np.inf, loc=mp, scale=s)
    neg = stats.truncnorm(-np.inf, -mn / s, loc=mn, scale=s)
    mean = w_pos * pos.mean() + (1 - w_pos) * neg.mean()
    x_map = np.sign(y) * max(abs(y) - lam * s2, 0.0)

    def sampler(rng, size):
        choose = rng.random(size) < w_pos
        a = pos.rvs(size=size, random_state=rng)
        b = neg.rvs(size=size, random_state=rng)
        return np.where(choose, a, b)[:, None]

    return ModelInstance(
        "lasso_1d",
        Potential(1, Quadratic(np.array([1.0 / s2]), np.array([y])), L1Norm(lam)),
        p,
        sampler,
        true_map=np.array([x_map]),
        true_mean=np.array([mean]),
    )


def _quartic(p):
    n = _dim(p)

    def sampler(rng, size):
        r = rng.gamma(0.25, 1.0, size=(size, n)) ** 0.25
        return np.where(rng.random((size, n)) < 0.5, -r, r)

    return ModelInstance(
        "quartic",
        Potential(n, Quartic()),
        p,
        sampler,
        true_map=np.zeros(n),
        true_mean=np.zeros(n),
        expected_gap=n / 4.0,
        expected_score=np.zeros(n),
    )


def _exp_linear(p):
    n = _dim(p)

    def sampler(rng, size):
        return np.log(rng.standard_exponential((size, n)))

    return ModelInstance(
        "exp_linear",
        Potential(n, ExpLinear()),
        p,
        sampler,
        true_map=np.zeros(n),
        true_mean=np.full(n, -np.euler_gamma),
        expected_gap=n * np.euler_gamma,
        expected_score=np.zeros(n),
    )


def _exponential_cone(p):
    n = _dim(p)
    rate = float(p.get("rate", 1.0))

    def sampler(rng, size):
        return rng.standard_exponential((size, n)) / rate

    return ModelInstance(
        "exponential_cone",
        Potential(n, Linear(np.full(n, rate)), BoxIndicator(Domain(np.zeros(n), np.full(n, np.inf)))),
        p,
        sampler,
        true_map=np.zeros(n),
        true_mean=np.full(n, 1.0 / rate),
        expected_gap=float(n),
        expected_score=np.full(n, rate),
    )


def _quad_moments(logdens, lo, hi, funcs):
    """``E[f(x)]`` for each f under a 1-D density ``exp(logdens)`` on [lo, hi]."""
    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200)
    dens = lambda t: np.exp(logdens(t))
    Z = integrate.quad(dens, lo, hi, **opts)[0]
    return [integrate.quad(lambda t: f(t) * dens(t), lo, hi, **opts)[0] / Z for f in funcs]


def _truncated_gaussian_box(p):
    n = _dim(p, "mu", "lower", "upper", default=1)
    mu = _vec(p.get("mu", 1.0), n, "mu")
    sigma = _vec(p.get("sigma", 1.0), n, "sigma")
    lower = _vec(p.get("lower", 0.0), n, "lower")
    upper = _vec(p.get("upper", np.inf), n, "upper")
    dom = Domain(lower, upper)
    mean = np.empty(n)
    gap = 0.0
    x_map = dom.project(mu)
    for i in range(n):
        m_i, s_i = mu[i], sigma[i]
        logd = lambda t: -((t - m_i) ** 2) / (2 * s_i**2)
        # integrate over the bulk of the mass for accuracy with infinite bounds
        lo, hi = max(lower[i], m_i - 40 * s_i), min(upper[i], m_i + 40 * s_i)
        e1, e2 = _quad_moments(logd, lo, hi, [lambda t: t, lambda t: (t - m_i) ** 2])
        mean[i] = e1
        gap += e2 / (2 * s_i**2) - (x_map[i] - m_i) ** 2 / (2 * s_i**2)
    a, b = (lower - mu) / sigma, (upper - mu) / sigma

    def sampler(rng, size):
        return stats.truncnorm.rvs(a, b, loc=mu, scale=sigma, size=(size, n), random_state=rng)

    score = (mean - mu) / sigma**2
    return ModelInstance(
        "truncated_gaussian_box",
        Potential(n, Quadratic(1.0 / sigma**2, mu), BoxIndicator(dom)),
        p,
        sampler,
        true_map=x_map,
        true_mean=mean,
        expected_gap=float(gap),
        expected_score=score,
        shifted_map=dom.project(mu + sigma**2 * score),
    )


def _exp_on_cone(p):
    n = _dim(p)
    logd = lambda t: -np.exp(t)
    # exp(-e^8) underflows to zero, so [0, 8] carries all the mass
    e_x, e_exp = _quad_moments(logd, 0.0, 8.0, [lambda t: t, np.exp])
    e_phi = e_exp
    dom = Domain(np.zeros(n), np.full(n, np.inf))

    def sampler(rng, size):
        # rejection from Exp(1): exp(-e^x) <= exp(-1 - x)
        out = np.empty((0, n))
        while out.shape[0] < size:
            m = int(1.8 * (size - out.shape[0])) + 16
            x = rng.standard_exponential((m, n))
            keep = np.all(rng.random((m, n)) < np.exp(1.0 + x - np.exp(x)), axis=1)
            out = np.concatenate([out, x[keep]])
        return out[:size]

    return ModelInstance(
        "exp_on_cone",
        Potential(n, Exponential(), BoxIndicator(dom)),
        p,
        sampler,
        true_map=np.zeros(n),
        true_mean=np.full(n, e_x),
        expected_gap=n * (e_phi - 1.0),
        expected_score=np.full(n, e_exp),
        shifted_map=np.full(n, np.log(e_exp)),
    )


ZOO = {
    "gaussian": (_gaussian, {"n", "mu", "cov"}),
    "gaussian_linear": (_gaussian_linear, {"n", "A", "y", "sigma", "prior_precision"}),
    "laplace_iid": (_laplace_iid, {"n", "scale"}),
    "lasso_1d": (_lasso_1d, {"y", "lam", "sigma"}),
    "quartic": (_quartic, {"n"}),
    "exp_linear": (_exp_linear, {"n"}),
    "exponential_cone": (_exponential_cone, {"n", "rate"}),
    "truncated_gaussian_box": (_truncated_gaussian_box, {"n", "mu", "sigma", "lower", "upper"}),
    "exp_on_cone": (_exp_on_cone, {"n"}),
}


def suggest_model(name: str) -> Optional[str]:
    close = difflib.get_close_matches(name, ZOO, n=1)
    return close[0] if close else None


def make_model(name: str, params: Optional[dict] = None, **kwargs) -> ModelInstance:
    """Build a zoo model by name, e.g. ``make_model("gaussian", mu=[1, 2])``."""
    params = dict(params or {}, **kwargs)
    if name not in ZOO:
        hint = suggest_model(name)
        extra = f"; did you mean {hint!r}?" if hint else ""
        raise InvalidArgumentError(f"unknown model {name!r}{extra}")
    build, allowed = ZOO[name]
    unknown = set(params) - allowed
    if unknown:
        raise InvalidArgumentError(f"unknown parameters for {name}: {sorted(unknown)}")
    return build(params)
