"""Posterior sampling: exact recipes and Langevin chains.

``exact`` uses the model's closed-form sampler. ``ula`` and ``mala`` are the
unadjusted and Metropolis-adjusted Langevin algorithms. ``myula`` runs ULA on
the smooth part plus the Moreau envelope of the non-smooth part, whose
gradient is ``(x - prox_{lam g}(x)) / lam``; its samples carry an
``O(lam)`` bias.

Every random stream is derived from one master seed through
``numpy.random.SeedSequence.spawn`` so results do not depend on how many
threads run the chains.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Union

import numpy as np

from .errors import InvalidArgumentError, UnsupportedOperationError
from .models import ModelInstance
from .solver import solve_map
from .terms import BoxIndicator

ALGORITHMS = ("exact", "ula", "mala", "myula")
CHUNK_ELEMENTS = 1 << 20
BLOCK_STEPS = 4096


@dataclass(frozen=True)
class ChainConfig:
    algorithm: str = "exact"
    n_samples: int = 10_000
    seed: int = 0
    step: Union[float, str] = "auto"
    moreau: Optional[float] = None
    burn_in: Optional[int] = None
    n_chains: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgumentError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.n_samples < 1 or self.n_chains < 1:
            raise InvalidArgumentError("n_samples and n_chains must be positive")
        if self.algorithm == "myula" and not (self.moreau is not None and self.moreau > 0):
            raise InvalidArgumentError("myula needs a positive Moreau parameter")
        if self.step != "auto" and not (isinstance(self.step, (int, float)) and self.step > 0):
            raise InvalidArgumentError("step must be 'auto' or a positive number")
        if self.burn_in is not None and self.burn_in < 0:
            raise InvalidArgumentError("burn_in must be nonnegative")

    def burn_in_for(self, n_kept):
        if self.burn_in is not None:
            return self.burn_in
        return 0 if self.algorithm == "exact" else n_kept // 10


@dataclass
class SampleSet:
    draws: np.ndarray
    algorithm: str
    seed: int
    burn_in: int = 0
    acceptance_rate: Optional[float] = None
    n_chains: int = 1
    step: Optional[float] = None
    chain_lengths: Optional[tuple] = None

    @property
    def low_acceptance(self) -> bool:
        return self.acceptance_rate is not None and self.acceptance_rate < 0.01

    @property
    def exact(self) -> bool:
        return self.algorithm == "exact"


def exact_stream(model: ModelInstance, n_samples: int, seed) -> Iterator[np.ndarray]:
    """Yield i.i.d. draws in fixed-size chunks (chunking depends only on n)."""
    if model.sampler is None:
        raise UnsupportedOperationError(f"model {model.name} has no exact sampler")
    rng = np.random.default_rng(seed)
    chunk = max(1, CHUNK_ELEMENTS // model.dim)
    left = n_samples
    while left > 0:
        m = min(chunk, left)
        yield np.asarray(model.sampler(rng, m), dtype=float).reshape(m, model.dim)
        left -= m


def _auto_step(model, cfg):
    pot = model.potential
    if cfg.step != "auto":
        return float(cfg.step)
    if cfg.algorithm == "myula":
        return 1.0 / (pot.smooth_lipschitz + 1.0 / cfg.moreau)
    # inside the domain an indicator adds nothing to the gradient
    L = pot.smooth_lipschitz if isinstance(pot.nonsmooth, BoxIndicator) else pot.lipschitz
    m = pot.strong_convexity
    if not np.isfinite(L) or L + m <= 0:
        raise InvalidArgumentError(f"auto step needs a finite gradient-Lipschitz constant (model {model.name})")
    return 1.0 / (L + m)


def _drift_fn(model, cfg):
    pot = model.potential
    if cfg.algorithm == "ula":
        if pot.nonsmooth is not None:
            raise UnsupportedOperationError("ula needs a smooth unconstrained potential; use myula")
        return pot.grad
    if cfg.algorithm == "mala":
        if pot.smooth is None and pot.nonsmooth is None:
            return lambda x: np.zeros_like(x)
        return pot.subgrad
    # myula
    if pot.nonsmooth is None:
        return pot.grad
    lam = cfg.moreau
    g = pot.nonsmooth

    def drift(x):
        return pot.smooth_grad(x) + (x - g.prox(x, lam)) / lam

    return drift


def _run_chains(model, cfg, step, drift, n_keep, seed_seqs, x0):
    """Advance a batch of independent chains in lockstep.

    Chain ``i`` draws its noise from its own generator, so its trajectory
    depends only on its seed, not on how chains are grouped.
    """
    pot = model.potential
    rngs = [np.random.default_rng(ss) for ss in seed_seqs]
    k, n = len(rngs), model.dim
    burn = cfg.burn_in_for(n_keep)
    total = burn + n_keep
    out = np.empty((n_keep, k, n))
    x = np.tile(np.asarray(x0, dtype=float), (k, 1))
    scale = np.sqrt(2.0 * step)
    accepted = np.zeros((n_keep, k), dtype=bool)
    mala = cfg.algorithm == "mala"
    if mala:
        fx, gx = pot.value(x), drift(x)
    t = 0
    while t < total:
        m = min(BLOCK_STEPS, total - t)
        noise = np.stack([r.standard_normal((m, n)) for r in rngs], axis=1)
        if mala:
            logu = np.stack([np.log(r.random(m)) for r in rngs], axis=1)
        for j in range(m):
            if mala:
                y = x - step * gx + scale * noise[j]
                fy = pot.value(y)
                ok = np.isfinite(fy)
                if t + j < burn // 2:
                    # unadjusted warm-up so chains started at the mode reach the bulk
                    take = ok
                    gy = drift(np.where(ok[:, None], y, x))
                else:
                    ys = np.where(ok[:, None], y, x)
                    gy = drift(ys)
                    fwd = y - x + step * gx
                    bwd = x - y + step * gy
                    with np.errstate(invalid="ignore"):
                        log_alpha = fx - fy - (np.sum(bwd * bwd, -1) - np.sum(fwd * fwd, -1)) / (4.0 * step)
                    take = ok & (logu[j] < log_alpha)
                    if t + j >= burn:
                        accepted[t + j - burn] = take
                x = np.where(take[:, None], y, x)
                fx = np.where(take, fy, fx)
                gx = np.where(take[:, None], gy, gx)
            else:
                x = x - step * drift(x) + scale * noise[j]
            if t + j >= burn:
                out[t + j - burn] = x
        t += m
    return out, burn, accepted


def sample(model: ModelInstance, config: ChainConfig, threads: int = 1) -> SampleSet:
    """Draw ``config.n_samples`` points from the posterior of ``model``.

    MCMC draws are returned chain by chain (all of chain 0, then chain 1, ...).
    """
    cfg = config
    if cfg.algorithm == "exact":
        draws = np.concatenate(list(exact_stream(model, cfg.n_samples, cfg.seed)))
        return SampleSet(draws, "exact", cfg.seed, burn_in=cfg.burn_in_for(cfg.n_samples))

    step = _auto_step(model, cfg)
    drift = _drift_fn(model, cfg)
    k = cfg.n_chains
    counts = [cfg.n_samples // k + (i < cfg.n_samples % k) for i in range(k)]
    n_keep = max(counts)
    seeds = np.random.SeedSequence(cfg.seed).spawn(k)
    x0 = model.true_map if model.true_map is not None else solve_map(model).estimate
    x0 = np.asarray(x0, dtype=float)

    groups = [g for g in np.array_split(np.arange(k), max(1, min(threads, k))) if g.size]
    job = lambda g: _run_chains(model, cfg, step, drift, n_keep, [seeds[i] for i in g], x0)
    if len(groups) > 1:
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            results = list(pool.map(job, groups))
    else:
        results = [job(g) for g in groups]

    # a chain with fewer requested draws keeps the prefix of its trajectory
    per_chain = [r[0][:, c] for r in results for c in range(r[0].shape[1])]
    draws = np.concatenate([ch[:c] for ch, c in zip(per_chain, counts)])
    burn = results[0][1]
    rate = None
    if cfg.algorithm == "mala":
        flags = np.concatenate([r[2] for r in results], axis=1)
        rate = float(sum(flags[:c, i].sum() for i, c in enumerate(counts)) / cfg.n_samples)
        if rate < 0.01:
            warnings.warn(f"MALA acceptance rate {rate:.4f} below 1%", RuntimeWarning, stacklevel=2)
    return SampleSet(draws, cfg.algorithm, cfg.seed, burn, rate, k, step, tuple(counts))


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's adaptive window."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    var = x @ x / n
    if n < 4 or var == 0:
        return 1.0
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acf = np.fft.irfft(f * np.conjugate(f), size)[:n] / (n * var)
    taus = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) >= c * taus
    m = int(np.argmax(window)) if np.any(window) else n - 1
    return float(max(taus[m], 1.0))


def posterior_mean(samples: SampleSet):
    """Coordinate-wise mean and Monte Carlo standard error.

    For MCMC draws the standard error is inflated by the integrated
    autocorrelation time, averaged over chains.
    """
    X = samples.draws
    N = X.shape[0]
    if N < 2:
        raise InvalidArgumentError("need at least two draws")
    mean = X.mean(axis=0)
    sd = X.std(axis=0, ddof=1)
    if samples.exact:
        return mean, sd / np.sqrt(N)
    lengths = samples.chain_lengths or [len(c) for c in np.array_split(X, samples.n_chains)]
    chains = np.split(X, np.cumsum(lengths)[:-1])
    tau = np.mean([[integrated_autocorr_time(ch[:, j]) for j in range(X.shape[1])] for ch in chains], axis=0)
    return mean, sd * np.sqrt(tau / N)


def summary(samples: SampleSet, model_name: str) -> dict:
    mean, se = posterior_mean(samples)
    return {
        "model": model_name,
        "algorithm": samples.algorithm,
        "N": int(samples.draws.shape[0]),
        "burn_in": int(samples.burn_in),
        "seed": int(samples.seed),
        "mean": [float(v) for v in mean],
        "se": [float(v) for v in se],
        "acceptance_rate": None if samples.acceptance_rate is None else float(samples.acceptance_rate),
    }
