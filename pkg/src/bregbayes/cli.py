"""Command line entry point.

Single-experiment subcommands print to stdout unless an output directory is
given with ``--out`` or the ``BREGBAYES_OUT`` environment variable, in which
case files and a manifest are written there. ``run <config>`` executes a
YAML run configuration (see :mod:`bregbayes.harness`).
"""

from __future__ import annotations

import argparse
import os
import sys

import yaml

from .errors import BregBayesError, ConfigError
from .harness import (
    ENV_OUT,
    EXIT_CONFIG,
    EXIT_OK,
    FORMATS,
    config_from_dict,
    csv_text,
    execute,
    json_text,
    load_config,
    run,
)

DEFAULT_FORMAT = {"map": "json", "mmse": "json", "conjugate": "json", "divergence": "csv", "audit": "csv"}


def _yaml_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise argparse.ArgumentTypeError(f"cannot parse {text!r}: {exc}") from exc


def _param(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), _yaml_value(v)


def _csv_list(cast):
    def parse(text):
        return [cast(t) for t in text.split(",") if t.strip()]
    return parse


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master random seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help=f"output directory (default ${ENV_OUT})")
    p.add_argument("--format", choices=FORMATS, default=argparse.SUPPRESS, help="output format")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="concurrent experiments")
    return p


def _model_args(p):
    p.add_argument("--model", required=True, help="zoo model name")
    p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                   help="model parameter, value parsed as YAML (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="bregbayes", parents=[common],
                                     description="Bregman-geometry estimators for log-concave posteriors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("map", parents=[common], help="posterior mode by convex optimisation")
    _model_args(p)
    p.add_argument("--method")
    p.add_argument("--step", type=_yaml_value)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("mmse", parents=[common], help="posterior mean by sampling")
    _model_args(p)
    p.add_argument("--algorithm")
    p.add_argument("--N", type=int)
    p.add_argument("--step", type=_yaml_value)
    p.add_argument("--moreau", type=float)
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--chains", dest="n_chains", type=int)

    p = sub.add_parser("divergence", parents=[common], help="divergences between point pairs")
    _model_args(p)
    p.add_argument("--u", type=_yaml_value)
    p.add_argument("--x", type=_yaml_value)
    p.add_argument("--forms", type=_csv_list(str))
    p.add_argument("--quad-order", dest="quad_order", type=int)
    p.add_argument("--pairs", type=int, help="random pairs when --u/--x are absent")

    p = sub.add_parser("conjugate", parents=[common], help="convex conjugate and dual coordinates")
    _model_args(p)
    p.add_argument("--eta", type=_yaml_value)
    p.add_argument("--pairs", type=int, help="random dual points when --eta is absent")

    p = sub.add_parser("audit", parents=[common], help="Monte Carlo audits")
    _model_args(p)
    p.add_argument("--checks", type=_csv_list(str))
    p.add_argument("--N", type=int)
    p.add_argument("--n-list", dest="n_list", type=_csv_list(int))
    p.add_argument("--eps-list", dest="eps_list", type=_csv_list(float))

    p = sub.add_parser("run", parents=[common], help="execute a YAML run configuration")
    p.add_argument("config")
    return parser


_NON_EXPERIMENT = {"command", "seed", "out", "format", "threads", "param"}


def _single(args) -> int:
    raw = {"subcommand": args.command, "model": args.model, "params": dict(args.param)}
    for k, v in vars(args).items():
        if k not in _NON_EXPERIMENT and k != "model" and v is not None:
            raw[k] = v
    raw["seed"] = getattr(args, "seed", 0)
    fmt = getattr(args, "format", DEFAULT_FORMAT[args.command])
    out = getattr(args, "out", None) or os.environ.get(ENV_OUT)
    data = {"experiments": [raw], "seed": raw["seed"], "formats": [fmt]}
    if out:
        data["out_dir"] = out
    cfg = config_from_dict(data)
    if out:
        return run(cfg, out_dir=out)
    res = execute(cfg.experiments[0])
    if res.payload is not None or res.rows:
        sys.stdout.write(csv_text(res.rows, res.columns) if fmt == "csv" else json_text(res.payload))
    if res.status != EXIT_OK:
        print(res.message, file=sys.stderr)
    return res.status


def _run(args) -> int:
    overrides = {}
    for flag, key in (("seed", "seed"), ("out", "out_dir"), ("threads", "threads")):
        if hasattr(args, flag):
            overrides[key] = getattr(args, flag)
    if hasattr(args, "format"):
        overrides["formats"] = [args.format]
    return run(load_config(args.config, overrides))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        return _single(args)
    except (ConfigError, BregBayesError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
