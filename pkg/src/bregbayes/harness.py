"""Config-driven experiment runner.

A run is described by one YAML file::

    seed: 1                  # master seed; experiments without a seed derive one
    out_dir: results         # optional; falls back to $BREGBAYES_OUT, then ./results
    formats: [csv, json]
    threads: 1
    experiments:
      - subcommand: audit    # map | mmse | divergence | conjugate | audit
        model: laplace_iid
        params: {scale: 1.0}
        N: 10000
        n_list: [100]
        eps_list: [0.5]

:func:`load_config` validates the file and fills in every default, so the
returned :class:`RunConfig` is the complete record of what will be run.
:func:`run` executes it, writes one file per experiment and format, and a
``manifest.json`` with content hashes. Exit codes: 0 all audits pass,
1 an audit failed, 2 configuration or argument error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import dataclasses
import difflib
import hashlib
import io
import json
import os
import sys
import tempfile
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import yaml

from . import __version__
from .audit import CHECKS, _fmt, tail_audit
from .errors import (
    BregBayesError,
    ConfigError,
    ConvergenceError,
    InvalidArgumentError,
    UnsupportedOperationError,
)
from .geometry import FORMS, divergence, legendre
from .models import ZOO, make_model, suggest_model
from .sampler import ALGORITHMS, ChainConfig, exact_stream, sample, summary
from .solver import METHODS, SolverConfig, solve_map

ENV_OUT = "BREGBAYES_OUT"
SUBCOMMANDS = ("map", "mmse", "divergence", "conjugate", "audit")
FORMATS = ("csv", "json")
EXIT_OK, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

MAP_COLUMNS = ("model", "method", "estimate", "objective", "residual", "iterations", "converged")
MMSE_COLUMNS = ("model", "algorithm", "N", "burn_in", "seed", "mean", "se", "acceptance_rate")
DIVERGENCE_COLUMNS = ("model", "form", "u", "x", "value", "quad_order", "residual")
CONJUGATE_COLUMNS = ("model", "eta", "x", "conjugate", "residual")
AUDIT_COLUMNS = ("check", "model", "n", "N", "estimate", "reference_or_bound", "slack", "pass", "seed")
PLOT_COLUMNS = ("check", "model", "n", "eps", "coord", "estimate", "bound")


@dataclass
class Experiment:
    """One unit of work. Fields irrelevant to ``subcommand`` keep their defaults."""

    subcommand: str
    model: str
    seed: int
    params: dict = field(default_factory=dict)
    name: str = ""
    # map
    method: str = "proximal_gradient"
    step: Union[float, str] = "auto"
    max_iter: int = 10_000
    tol: float = 1e-10
    # mmse and audit
    algorithm: str = "exact"
    N: int = 10_000
    burn_in: Optional[int] = None
    n_chains: int = 1
    moreau: Optional[float] = None
    # audit
    checks: list = field(default_factory=list)
    n_list: list = field(default_factory=list)
    eps_list: list = field(default_factory=list)
    # divergence and conjugate
    forms: list = field(default_factory=list)
    pairs: int = 5
    u: Optional[list] = None
    x: Optional[list] = None
    eta: Optional[list] = None
    quad_order: int = 30


@dataclass
class RunConfig:
    experiments: list
    seed: int
    out_dir: str = "results"
    formats: list = field(default_factory=lambda: ["csv", "json"])
    threads: int = 1
    source: Optional[str] = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("source")
        return d

    def digest(self) -> str:
        """Hash of everything that affects results (not out_dir or threads)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class ExperimentResult:
    experiment: Experiment
    index: int
    rows: list = field(default_factory=list)
    columns: tuple = ()
    payload: Any = None
    reports: list = field(default_factory=list)
    status: int = EXIT_OK
    message: str = ""

    @property
    def stem(self) -> str:
        e = self.experiment
        return e.name or f"{self.index:02d}_{e.subcommand}_{e.model}"


# ---------------------------------------------------------------- config

_TOP_KEYS = {"seed", "out_dir", "formats", "threads", "experiments"}
_EXP_KEYS = {f.name for f in dataclasses.fields(Experiment)}


def _suggest(word, choices):
    hit = difflib.get_close_matches(word, list(choices), n=1)
    return f"; did you mean {hit[0]!r}?" if hit else ""


def _int(v, where, minimum=None):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {v}")
    return v


def _float(v, where, positive=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}: must be positive, got {v}")
    return float(v)


def _list(v, where):
    if v is None:
        return []
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"{where}: expected a list, got {v!r}")
    return list(v)


def applicable_checks(model) -> list:
    """Audit checks that apply to a model instance."""
    pot = model.potential
    if pot.constrained:
        return ["score_identity", "shifted_map", "bayes_argmin_dual", "expected_error_map", "duality_closure"]
    out = ["bayes_argmin_primal"]
    if pot.nonsmooth is None:
        out.append("bayes_argmin_dual")
    out += ["score_identity", "expected_error_map"]
    if pot.nonsmooth is None:
        out.append("expected_error_mmse")
    return out + ["duality_closure"]


def _derive_seed(master, index):
    return int(np.random.SeedSequence(master, spawn_key=(index,)).generate_state(1)[0])


def _check_writable(path):
    p = Path(path).resolve()
    while not p.exists():
        p = p.parent
    if not (p.is_dir() and os.access(p, os.W_OK)):
        raise ConfigError(f"out_dir: {path!r} is not writable")


def validate_experiment(raw, where, master_seed=None, index=0) -> Experiment:
    """Build a fully materialised :class:`Experiment` from a mapping."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected a mapping, got {raw!r}")
    for k in raw:
        if k not in _EXP_KEYS:
            raise ConfigError(f"{where}: unknown field {k!r}{_suggest(str(k), _EXP_KEYS)}")
    for req in ("subcommand", "model"):
        if req not in raw:
            raise ConfigError(f"{where}: missing required field {req!r}")
    sub = raw["subcommand"]
    if sub not in SUBCOMMANDS:
        raise ConfigError(f"{where}.subcommand: unknown subcommand {sub!r}{_suggest(str(sub), SUBCOMMANDS)}")
    name = raw["model"]
    if name not in ZOO:
        hint = suggest_model(str(name))
        raise ConfigError(
            f"{where}.model: unknown model {name!r}" + (f"; did you mean {hint!r}?" if hint else "")
        )
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError(f"{where}.params: expected a mapping")
    try:
        inst = make_model(name, params)
    except BregBayesError as exc:
        raise ConfigError(f"{where}.params: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}.params: {exc}") from exc

    if "seed" in raw:
        seed = _int(raw["seed"], f"{where}.seed", 0)
    elif master_seed is not None:
        seed = _derive_seed(master_seed, index)
    else:
        raise ConfigError(f"{where}: missing required field 'seed' (set it here or at the top level)")

    e = Experiment(subcommand=sub, model=name, seed=seed, params=dict(params))
    e.name = str(raw.get("name", ""))
    e.method = raw.get("method", e.method)
    if e.method not in METHODS:
        raise ConfigError(f"{where}.method: unknown method {e.method!r}{_suggest(str(e.method), METHODS)}")
    e.step = raw.get("step", e.step)
    if e.step != "auto":
        e.step = _float(e.step, f"{where}.step", positive=True)
    e.max_iter = _int(raw.get("max_iter", e.max_iter), f"{where}.max_iter", 1)
    e.tol = _float(raw.get("tol", e.tol), f"{where}.tol", positive=True)
    e.algorithm = raw.get("algorithm", e.algorithm)
    if e.algorithm not in ALGORITHMS:
        raise ConfigError(
            f"{where}.algorithm: unknown algorithm {e.algorithm!r}{_suggest(str(e.algorithm), ALGORITHMS)}"
        )
    e.N = _int(raw.get("N", e.N), f"{where}.N", 2)
    e.n_chains = _int(raw.get("n_chains", e.n_chains), f"{where}.n_chains", 1)
    if raw.get("moreau") is not None:
        e.moreau = _float(raw["moreau"], f"{where}.moreau", positive=True)
    if e.subcommand == "mmse" and e.algorithm == "myula" and e.moreau is None:
        raise ConfigError(f"{where}.moreau: required for algorithm 'myula'")
    if raw.get("burn_in") is not None:
        e.burn_in = _int(raw["burn_in"], f"{where}.burn_in", 0)
    elif e.subcommand == "mmse":
        e.burn_in = 0 if e.algorithm == "exact" else e.N // 10

    if e.subcommand == "audit":
        e.n_list = [_int(v, f"{where}.n_list", 1) for v in _list(raw.get("n_list"), f"{where}.n_list")]
        e.eps_list = [_float(v, f"{where}.eps_list") for v in _list(raw.get("eps_list"), f"{where}.eps_list")]
        checks = _list(raw.get("checks"), f"{where}.checks")
        allowed = applicable_checks(inst)
        if not checks:
            checks = list(allowed)
            if e.eps_list:
                checks.append("tail_bound")
        for c in checks:
            if c == "tail_bound":
                if not (e.n_list and e.eps_list):
                    raise ConfigError(f"{where}.checks: tail_bound needs n_list and eps_list")
                continue
            if c not in CHECKS:
                raise ConfigError(f"{where}.checks: unknown check {c!r}{_suggest(str(c), list(CHECKS) + ['tail_bound'])}")
            if c not in allowed:
                raise ConfigError(f"{where}.checks: {c!r} does not apply to model {name!r}")
        e.checks = list(checks)

    if e.subcommand == "divergence":
        forms = _list(raw.get("forms"), f"{where}.forms")
        if not forms:
            smooth = inst.potential.nonsmooth is None
            forms = ["bregman_primal", "bregman_dual", "canonical_numeric"] if smooth else ["generalized_dual"]
        for f in forms:
            if f not in FORMS:
                raise ConfigError(f"{where}.forms: unknown form {f!r}{_suggest(str(f), FORMS)}")
        e.forms = list(forms)
        e.quad_order = _int(raw.get("quad_order", e.quad_order), f"{where}.quad_order", 1)

    if e.subcommand in ("divergence", "conjugate"):
        e.pairs = _int(raw.get("pairs", e.pairs), f"{where}.pairs", 1)
        for key in ("u", "x", "eta"):
            if raw.get(key) is not None:
                setattr(e, key, [float(v) for v in np.atleast_1d(np.asarray(raw[key], dtype=float))])
        if e.subcommand == "divergence" and (e.u is None) != (e.x is None):
            raise ConfigError(f"{where}: give both u and x, or neither")
        if e.subcommand == "conjugate" and inst.potential.nonsmooth is not None:
            raise ConfigError(f"{where}: conjugate needs a smooth unconstrained model")
    return e


def config_from_dict(data, source=None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    for k in data:
        if k not in _TOP_KEYS:
            raise ConfigError(f"config: unknown field {k!r}{_suggest(str(k), _TOP_KEYS)}")
    master = data.get("seed")
    if master is not None:
        master = _int(master, "seed", 0)
    exps = _list(data.get("experiments"), "experiments")
    if not exps:
        raise ConfigError("experiments: at least one experiment is required")
    experiments = [validate_experiment(r, f"experiments[{i}]", master, i) for i, r in enumerate(exps)]
    if master is None:
        # every experiment carries its own seed; record the first as the run seed
        master = experiments[0].seed
    formats = _list(data.get("formats", ["csv", "json"]), "formats")
    for f in formats:
        if f not in FORMATS:
            raise ConfigError(f"formats: unknown format {f!r}; expected a subset of {FORMATS}")
    out_dir = data.get("out_dir") or os.environ.get(ENV_OUT) or "results"
    _check_writable(out_dir)
    threads = _int(data.get("threads", 1), "threads", 1)
    return RunConfig(experiments, master, str(out_dir), list(formats), threads, source)


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    ``overrides`` replaces top-level fields (e.g. ``seed``, ``out_dir``)
    before validation.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: parse error at {where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    if overrides and isinstance(data, dict):
        data = {**data, **overrides}
    return config_from_dict(data, str(path))


# ---------------------------------------------------------------- execution


def _vec_str(v):
    return _fmt(v)


def _num(v):
    return "" if v is None else repr(float(v))


def _run_map(e: Experiment, res: ExperimentResult):
    model = make_model(e.model, e.params)
    cfg = SolverConfig(method=e.method, step=e.step, max_iter=e.max_iter, tol=e.tol, seed=e.seed)
    out = solve_map(model, cfg)
    d = out.to_dict(e.model)
    res.payload = d
    res.columns = MAP_COLUMNS
    res.rows = [{
        "model": d["model"], "method": d["method"], "estimate": _vec_str(d["estimate"]),
        "objective": _num(d["objective"]), "residual": _num(d["residual"]),
        "iterations": d["iterations"], "converged": "true" if d["converged"] else "false",
    }]
    if not out.converged:
        res.status = EXIT_NUMERIC
        res.message = f"map solver did not converge (residual {out.residual:.3g})"


def _run_mmse(e: Experiment, res: ExperimentResult):
    model = make_model(e.model, e.params)
    cfg = ChainConfig(e.algorithm, e.N, e.seed, e.step, e.moreau, e.burn_in, e.n_chains)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        d = summary(sample(model, cfg), e.model)
    res.payload = d
    res.columns = MMSE_COLUMNS
    res.rows = [{
        "model": d["model"], "algorithm": d["algorithm"], "N": d["N"], "burn_in": d["burn_in"],
        "seed": d["seed"], "mean": _vec_str(d["mean"]), "se": _vec_str(d["se"]),
        "acceptance_rate": _num(d["acceptance_rate"]),
    }]


def _points(e, model, count):
    draws = np.concatenate(list(exact_stream(model, count, e.seed)))
    return model.potential.domain.project(draws)


def _run_divergence(e: Experiment, res: ExperimentResult):
    model = make_model(e.model, e.params)
    pot = model.potential
    if e.u is not None:
        pairs = [(np.asarray(e.u), np.asarray(e.x))]
    else:
        P = _points(e, model, 2 * e.pairs)
        pairs = list(zip(P[: e.pairs], P[e.pairs:]))
    rows = []
    for u, x in pairs:
        for form in e.forms:
            dv = divergence(pot, form, u, x, quad_order=e.quad_order)
            rows.append({
                "model": e.model, "form": form, "u": _vec_str(u), "x": _vec_str(x),
                "value": _num(dv.value),
                "quad_order": "" if dv.quad_order is None else dv.quad_order,
                "residual": _num(dv.residual),
            })
    res.rows, res.columns, res.payload = rows, DIVERGENCE_COLUMNS, rows


def _run_conjugate(e: Experiment, res: ExperimentResult):
    model = make_model(e.model, e.params)
    pot = model.potential
    etas = [np.asarray(e.eta)] if e.eta is not None else list(pot.grad(_points(e, model, e.pairs)))
    rows = []
    for eta in etas:
        dp = legendre(pot, eta)
        rows.append({
            "model": e.model, "eta": _vec_str(eta), "x": _vec_str(dp.x),
            "conjugate": _num(dp.conjugate), "residual": _num(dp.residual),
        })
    res.rows, res.columns, res.payload = rows, CONJUGATE_COLUMNS, rows


def _run_audit(e: Experiment, res: ExperimentResult):
    reports = []
    sizes = e.n_list or [None]
    per_model = [c for c in e.checks if c != "tail_bound"]
    for n in sizes:
        params = dict(e.params)
        if n is not None:
            params["n"] = n
        model = make_model(e.model, params)
        for c in per_model:
            reports.append(CHECKS[c](model, e.N, e.seed))
    if "tail_bound" in e.checks:
        reports.extend(tail_audit(e.model, e.n_list, e.eps_list, e.N, e.seed, e.params))
    res.reports = reports
    res.columns = AUDIT_COLUMNS
    res.rows = [r.row() for r in reports]
    res.payload = [dict(r.row(), eps=r.eps) for r in reports]
    failed = [f"{r.check}[{r.model}, n={r.n}" + (f", eps={r.eps}" if r.eps is not None else "") + "]"
              for r in reports if not r.passed]
    if failed:
        res.status = EXIT_AUDIT
        res.message = "failing checks: " + ", ".join(failed)


RUNNERS = {
    "map": _run_map,
    "mmse": _run_mmse,
    "divergence": _run_divergence,
    "conjugate": _run_conjugate,
    "audit": _run_audit,
}


def execute(e: Experiment, index: int = 0) -> ExperimentResult:
    """Run one experiment, mapping errors onto the exit-code contract."""
    res = ExperimentResult(e, index)
    try:
        RUNNERS[e.subcommand](e, res)
    except (ConfigError, InvalidArgumentError, UnsupportedOperationError) as exc:
        res.status, res.message = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    except ConvergenceError as exc:
        res.status, res.message = EXIT_NUMERIC, f"ConvergenceError: {exc}"
    except BregBayesError as exc:
        res.status, res.message = EXIT_CONFIG, f"{type(exc).__name__}: {exc}"
    return res


def exit_code(results) -> int:
    codes = {r.status for r in results}
    for c in (EXIT_CONFIG, EXIT_NUMERIC, EXIT_AUDIT):
        if c in codes:
            return c
    return EXIT_OK


# ---------------------------------------------------------------- output


def csv_text(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def json_text(payload) -> str:
    return json.dumps(payload, indent=2) + "\n"


def write_atomic(path, text: str) -> str:
    """Write UTF-8 text via a temporary file and rename; return its sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data).hexdigest()


def plot_rows(reports) -> list:
    rows = []
    for r in reports:
        est = np.atleast_1d(np.asarray(r.estimate, dtype=float))
        ref = np.broadcast_to(np.atleast_1d(np.asarray(r.reference, dtype=float)), est.shape)
        for j, (a, b) in enumerate(zip(est, ref)):
            rows.append({
                "check": r.check, "model": r.model, "n": r.n,
                "eps": "" if r.eps is None else repr(float(r.eps)),
                "coord": j, "estimate": repr(float(a)), "bound": repr(float(b)),
            })
    return rows


def emit_plot_data(reports, path) -> Optional[Path]:
    """Long-format CSV with one row per (check, n, eps, coordinate)."""
    reports = list(reports)
    if not reports:
        warnings.warn("emit_plot_data: empty report set, nothing written", RuntimeWarning, stacklevel=2)
        return None
    write_atomic(path, csv_text(plot_rows(reports), PLOT_COLUMNS))
    return Path(path)


def write_outputs(res: ExperimentResult, out_dir, formats) -> list:
    """Write the files for one experiment; return ``[(name, sha256)]``."""
    written = []
    if res.status == EXIT_CONFIG or (res.payload is None and not res.rows):
        return written
    out = Path(out_dir)
    if "csv" in formats:
        name = f"{res.stem}.csv"
        written.append((name, write_atomic(out / name, csv_text(res.rows, res.columns))))
        if res.reports:
            name = f"{res.stem}_plot.csv"
            written.append((name, write_atomic(out / name, csv_text(plot_rows(res.reports), PLOT_COLUMNS))))
    if "json" in formats:
        name = f"{res.stem}.json"
        written.append((name, write_atomic(out / name, json_text(res.payload))))
    return written


def run(config: RunConfig, out_dir=None, threads=None, log=sys.stderr) -> int:
    """Execute every experiment, write artifacts and the manifest; return the exit code."""
    out_dir = Path(out_dir or config.out_dir)
    threads = threads or config.threads
    t0 = time.perf_counter()
    jobs = list(enumerate(config.experiments))

    def job(item):
        i, e = item
        r = execute(e, i)
        return r, write_outputs(r, out_dir, config.formats)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(job, jobs))
    else:
        done = [job(j) for j in jobs]

    results = [r for r, _ in done]
    code = exit_code(results)
    files = [{"path": name, "sha256": digest} for _, written in done for name, digest in written]
    problems = [f"[{r.stem}] {r.message}" for r in results if r.status != EXIT_OK]
    manifest = {
        "version": __version__,
        "seed": config.seed,
        "config_sha256": config.digest(),
        "config_source": config.source,
        "config": config.to_dict(),
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "exit_code": code,
        "problems": problems,
        "files": files,
    }
    write_atomic(out_dir / "manifest.json", json_text(manifest))
    if log is not None:
        for p in problems:
            print(p, file=log)
        n_rep = sum(len(r.reports) for r in results)
        n_fail = sum(not rep.passed for r in results for rep in r.reports)
        print(f"{len(results)} experiments, {n_rep} audit rows, {n_fail} failing; exit {code}", file=log)
    return code
