import csv
import hashlib
import json
from pathlib import Path

import pytest
import yaml

from bregbayes.audit import expected_error_map
from bregbayes.cli import main
from bregbayes.errors import ConfigError
from bregbayes.harness import (
    ENV_OUT,
    EXIT_AUDIT,
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    PLOT_COLUMNS,
    applicable_checks,
    config_from_dict,
    emit_plot_data,
    execute,
    load_config,
    run,
)
from bregbayes.models import make_model


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def minimal(tmp_path, **extra):
    data = {
        "seed": 7,
        "out_dir": str(tmp_path / "out"),
        "experiments": [
            {"subcommand": "map", "model": "gaussian", "params": {"mu": [1.0, 2.0]}},
            {"subcommand": "audit", "model": "gaussian", "N": 2000, "checks": ["expected_error_map"]},
        ],
    }
    data.update(extra)
    return data


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- config loading -----------------------------------------------------------


def test_minimal_config_round_trip(tmp_path):
    cfg = load_config(write_yaml(tmp_path / "c.yaml", minimal(tmp_path)))
    again = config_from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.digest() == cfg.digest()
    e = cfg.experiments[1]
    # defaults are materialised so the config records the complete run
    assert e.seed is not None and e.checks == ["expected_error_map"]
    assert cfg.experiments[0].method


def test_missing_seed_names_the_field(tmp_path):
    data = minimal(tmp_path)
    del data["seed"]
    with pytest.raises(ConfigError, match="missing required field 'seed'"):
        config_from_dict(data)


def test_per_experiment_seed_suffices(tmp_path):
    data = minimal(tmp_path)
    del data["seed"]
    for i, e in enumerate(data["experiments"]):
        e["seed"] = 10 + i
    cfg = config_from_dict(data)
    assert [e.seed for e in cfg.experiments] == [10, 11]


def test_derived_seeds_are_distinct(tmp_path):
    cfg = config_from_dict(minimal(tmp_path))
    assert cfg.experiments[0].seed != cfg.experiments[1].seed


def test_unknown_model_suggests(tmp_path):
    data = minimal(tmp_path)
    data["experiments"][0]["model"] = "gausian"
    with pytest.raises(ConfigError, match="gaussian"):
        config_from_dict(data)


def test_unknown_field_suggests(tmp_path):
    data = minimal(tmp_path)
    data["experiments"][0]["methdo"] = "fista"
    with pytest.raises(ConfigError, match="method"):
        config_from_dict(data)


def test_yaml_parse_error_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seed: 1\nexperiments:\n  - subcommand: map\n    model: [gaussian\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="line"):
        load_config(p)


def test_eps_outside_range_exits_config_error(tmp_path):
    data = minimal(tmp_path)
    data["experiments"] = [{"subcommand": "audit", "model": "gaussian", "N": 100, "n_list": [10], "eps_list": [3.0]}]
    p = write_yaml(tmp_path / "c.yaml", data)
    assert main(["run", str(p)]) == EXIT_CONFIG


def test_conjugate_requires_smooth_model(tmp_path):
    data = minimal(tmp_path)
    data["experiments"] = [{"subcommand": "conjugate", "model": "laplace_iid"}]
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_applicable_checks():
    assert "shifted_map" in applicable_checks(make_model("truncated_gaussian_box"))
    assert "bayes_argmin_primal" not in applicable_checks(make_model("truncated_gaussian_box"))
    smooth = applicable_checks(make_model("gaussian"))
    assert {"bayes_argmin_primal", "bayes_argmin_dual", "expected_error_mmse"} <= set(smooth)
    assert "expected_error_mmse" not in applicable_checks(make_model("laplace_iid"))


# -- execution and artifacts --------------------------------------------------


def test_run_writes_manifest_with_hashes(tmp_path):
    cfg = config_from_dict(minimal(tmp_path))
    assert run(cfg, log=None) == EXIT_OK
    out = Path(cfg.out_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["seed"] == 7
    assert manifest["config_sha256"] == cfg.digest()
    assert manifest["files"]
    for f in manifest["files"]:
        assert hashlib.sha256((out / f["path"]).read_bytes()).hexdigest() == f["sha256"]


def test_rerun_is_byte_identical(tmp_path):
    data = minimal(tmp_path)
    data["experiments"].append({"subcommand": "mmse", "model": "gaussian", "algorithm": "mala", "N": 500, "n_chains": 2})
    a = config_from_dict({**data, "out_dir": str(tmp_path / "a")})
    b = config_from_dict({**data, "out_dir": str(tmp_path / "b"), "threads": 3})
    assert a.digest() == b.digest()
    run(a, log=None)
    run(b, log=None)
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["files"] == mb["files"]


def test_audit_failure_exit_code(tmp_path, monkeypatch):
    import bregbayes.harness as harness

    def failing(model, N, seed):
        rep = expected_error_map(model, N, seed)
        rep.passed = False
        return rep

    monkeypatch.setitem(harness.CHECKS, "expected_error_map", failing)
    cfg = config_from_dict(minimal(tmp_path))
    assert run(cfg, log=None) == EXIT_AUDIT
    manifest = json.loads((Path(cfg.out_dir) / "manifest.json").read_text())
    assert manifest["exit_code"] == EXIT_AUDIT
    assert "expected_error_map" in manifest["problems"][0]


def test_nonconverged_map_is_numeric_failure(tmp_path):
    data = minimal(tmp_path)
    data["experiments"] = [{"subcommand": "map", "model": "gaussian", "max_iter": 1, "tol": 1e-14,
                            "params": {"mu": [3.0, -1.0], "cov": [1.0, 4.0]}}]
    res = execute(config_from_dict(data).experiments[0])
    assert res.status == EXIT_NUMERIC


def test_default_out_dir_from_environment(tmp_path, monkeypatch):
    data = minimal(tmp_path)
    del data["out_dir"]
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    assert config_from_dict(data).out_dir == str(tmp_path / "env")


# -- plot data ----------------------------------------------------------------


def test_emit_plot_data_empty_warns(tmp_path):
    with pytest.warns(RuntimeWarning, match="empty"):
        assert emit_plot_data([], tmp_path / "p.csv") is None
    assert not (tmp_path / "p.csv").exists()


def test_emit_plot_data_single_report(tmp_path):
    rep = expected_error_map(make_model("gaussian"), 1000, seed=0)
    path = emit_plot_data([rep], tmp_path / "p.csv")
    rows = read_csv(path)
    assert len(rows) == 1 and list(rows[0]) == list(PLOT_COLUMNS)


def test_emit_plot_data_laplace_sweep(tmp_path):
    reps = [expected_error_map(make_model("laplace_iid", {"n": n}), 20_000, seed=n) for n in (10, 100, 1000)]
    rows = read_csv(emit_plot_data(reps, tmp_path / "p.csv"))
    assert [int(r["n"]) for r in rows] == [10, 100, 1000]
    for r in rows:
        assert float(r["estimate"]) == pytest.approx(1.0, abs=0.05)


# -- command line -------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [
        ["map", "--model", "gaussian", "--param", "mu=[1.0, 2.0]"],
        ["mmse", "--model", "exp_linear", "--algorithm", "exact", "--N", "1000"],
        ["divergence", "--model", "quartic", "--u", "2", "--x", "1"],
        ["conjugate", "--model", "gaussian", "--eta", "0.5"],
        ["audit", "--model", "gaussian", "--N", "1000", "--checks", "expected_error_map"],
    ],
)
def test_cli_subcommands_print(argv, capsys):
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    assert out.strip()


def test_cli_divergence_values(capsys):
    assert main(["divergence", "--model", "quartic", "--u", "2", "--x", "1", "--forms", "bregman_primal,bregman_dual"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [float(r["value"]) for r in rows] == [11.0, 17.0]


def test_cli_map_json(capsys):
    assert main(["map", "--model", "lasso_1d", "--format", "json"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["estimate"][0] == pytest.approx(1.0, abs=1e-8)


def test_cli_writes_to_env_out(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "o"))
    assert main(["map", "--model", "gaussian"]) == 0
    assert (tmp_path / "o" / "manifest.json").exists()


def test_cli_run_config_with_overrides(tmp_path):
    p = write_yaml(tmp_path / "c.yaml", minimal(tmp_path))
    out = tmp_path / "override"
    assert main(["run", str(p), "--out", str(out), "--threads", "2", "--format", "csv"]) == 0
    assert all(f.endswith(".csv") for f in (x["path"] for x in json.loads((out / "manifest.json").read_text())["files"]))


def test_cli_bad_model_exits_two(capsys):
    assert main(["map", "--model", "gausian"]) == EXIT_CONFIG
    assert "gaussian" in capsys.readouterr().err


def test_cli_missing_config_exits_two(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG
