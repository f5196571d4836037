"""First-order solvers for the posterior mode ``argmin phi``.

Potentials are split as ``phi = f + g`` with ``f`` smooth and ``g`` handled
through its prox (a projection when ``g`` is an indicator). Optimality is
measured by the prox-gradient fixed-point residual
``||x - prox_{step g}(x - step grad f(x))|| / step``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DomainError, InvalidArgumentError, UnsupportedOperationError
from .models import ModelInstance, Potential
from .terms import BoxIndicator

METHODS = ("gradient", "proximal_gradient", "fista", "projected_gradient")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "proximal_gradient"
    step: Union[float, str] = "auto"
    max_iter: int = 10_000
    tol: float = 1e-10
    seed: Optional[int] = None  # reserved for random restarts

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidArgumentError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.tol > 0:
            raise InvalidArgumentError("tol must be positive")
        if self.step != "auto" and not (isinstance(self.step, (int, float)) and self.step > 0):
            raise InvalidArgumentError("step must be 'auto' or a positive number")


@dataclass
class SolverResult:
    estimate: np.ndarray
    objective: float
    residual: float
    iterations: int
    converged: bool
    uniqueness_certified: bool = True
    method: str = ""
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self, model_name=""):
        return {
            "model": model_name,
            "method": self.method,
            "estimate": [float(v) for v in self.estimate],
            "objective": float(self.objective),
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def _potential(model) -> Potential:
    return model.potential if isinstance(model, ModelInstance) else model


def _parts(pot: Potential):
    if pot.smooth is None:
        f = lambda x: 0.0
        df = lambda x: np.zeros_like(x)
    else:
        f, df = pot.smooth.value, pot.smooth.grad
    if pot.nonsmooth is None:
        pg = lambda v, s: v
    else:
        pg = pot.nonsmooth.prox
    return f, df, pg


def certify_optimality(model, x, gamma: float = 1.0) -> float:
    """Prox-gradient fixed-point residual at ``x``; zero iff ``0 in d phi(x)``."""
    pot = _potential(model)
    x = pot._check(x)
    if not np.all(pot.domain.contains(x)):
        raise DomainError("x outside the domain")
    _, df, pg = _parts(pot)
    return float(np.linalg.norm(x - pg(x - gamma * df(x), gamma)) / gamma)


def solve_map(model, config: Optional[SolverConfig] = None, x0=None) -> SolverResult:
    """Minimise ``phi``; never raises on non-convergence (``converged=False``)."""
    cfg = config or SolverConfig()
    pot = _potential(model)
    if cfg.method == "gradient" and pot.nonsmooth is not None:
        raise UnsupportedOperationError("gradient method needs a smooth potential; use proximal_gradient")
    if cfg.method == "projected_gradient" and not (
        pot.nonsmooth is None or isinstance(pot.nonsmooth, BoxIndicator)
    ):
        raise UnsupportedOperationError("projected_gradient needs an indicator as the non-smooth part")

    f, df, pg = _parts(pot)
    L = pot.smooth_lipschitz
    if cfg.step != "auto":
        step, backtrack = float(cfg.step), False
        if np.isfinite(L) and L > 0 and step >= 2.0 / L:
            raise InvalidArgumentError(f"step {step} outside (0, 2/L) with L={L}")
    elif np.isfinite(L) and L > 0:
        step, backtrack = 1.0 / L, False
    else:
        step, backtrack = 1.0, True

    x = pot.domain.initial_point() if x0 is None else pot.domain.project(pot._check(x0).astype(float))
    y, t_mom = x.copy(), 1.0
    trace = [float(pot.value(x))]
    residual = np.inf
    it = 0

    def forward_backward(z, s):
        gz = df(z)
        while True:
            zn = pg(z - s * gz, s)
            if not backtrack:
                return zn, s
            d = zn - z
            # local Lipschitz test on gradients; unlike the function-value test
            # it stays meaningful once decreases fall below roundoff
            with np.errstate(over="ignore", invalid="ignore"):
                fz, fzn = f(z), f(zn)
                ok = (
                    np.isfinite(fzn)
                    and fzn <= fz + 1e-12 * (1.0 + abs(fz))
                    and np.linalg.norm(df(zn) - gz) * s <= np.linalg.norm(d)
                )
            if ok or s < 1e-20:
                return zn, s
            s *= 0.5

    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, cfg.max_iter + 1):
            xn, step = forward_backward(x, step)
            residual = float(np.linalg.norm(x - xn) / step)
            if residual <= cfg.tol:
                it -= 1
                break
            if cfg.method == "fista":
                xa, step = forward_backward(y, step)
                if pot.value(xa) > pot.value(x):
                    # momentum overshot: restart from the plain step
                    xa, t_next, y = xn, 1.0, xn.copy()
                else:
                    t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_mom**2))
                    y = xa + ((t_mom - 1.0) / t_next) * (xa - x)
                x, t_mom = xa, t_next
            else:
                x = xn
            trace.append(float(pot.value(x)))
            if backtrack:
                step *= 1.25
        else:
            residual = certify_optimality(pot, x, step)

    return SolverResult(
        estimate=x,
        objective=float(pot.value(x)),
        residual=residual,
        iterations=it,
        converged=residual <= cfg.tol,
        uniqueness_certified=pot.strictly_convex or pot.strong_convexity > 0,
        method=cfg.method,
        trace=trace,
    )
