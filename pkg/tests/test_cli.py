import csv
import json
import math
import warnings
from pathlib import Path

import numpy as np
import pytest

import symheckman
from symheckman import cli
from symheckman.exceptions import ConfigError, DataError, DataWarning

ROOT = Path(__file__).resolve().parents[1]

TINY_MODEL = {"outcome": "y", "selection": "u", "outcome_covariates": ["x"]}


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    """Scenario-1 data written by the CLI, reused by the fit/diagnose tests."""
    root = tmp_path_factory.mktemp("sim")
    status = _run("simulate", "--scenario", "1", "--n", 800, "--seed", 42, "--out", root)
    assert status == 0
    return root


# -- ingestion ---------------------------------------------------------------------

def test_ingest_happy_path(tmp_path):
    path = _write(tmp_path / "d.csv", "y,u,x\n1.5,1,0.2\n,0,0.4\n-0.3,1,0.9\n")
    data = cli.ingest_csv(path, TINY_MODEL)
    assert data.n == 3 and data.n_observed == 2
    assert np.isnan(data.y[1])
    np.testing.assert_array_equal(data.X, [[1, 0.2], [1, 0.4], [1, 0.9]])
    assert data.names["beta"] == ["(Intercept)", "x"]
    # blocks without columns get an intercept only
    assert data.dims == (2, 1, 1, 1)


def test_ingest_skips_comment_lines_and_honours_intercept_flag(tmp_path):
    path = _write(tmp_path / "d.csv", "# provenance\ny,u,x\n1,1,2\n,0,3\n")
    model = dict(TINY_MODEL, outcome_covariates={"columns": ["x"], "intercept": False})
    data = cli.ingest_csv(path, model)
    np.testing.assert_array_equal(data.X, [[2.0], [3.0]])


def test_ingest_missing_column_is_named(tmp_path):
    path = _write(tmp_path / "d.csv", "outcome,u,x\n1,1,2\n")
    with pytest.raises(DataError, match="'?y'?"):
        cli.ingest_csv(path, TINY_MODEL)
    with pytest.raises(DataError) as err:
        cli.ingest_csv(path, TINY_MODEL)
    assert "y" in str(err.value).split(":")[-1]


@pytest.mark.parametrize("body, fragment", [
    ("", "empty"),
    ("y,u,x\n", "no data rows"),
    ("y,u,x\n1,1,abc\n", "non-numeric"),
    ("y,u,x\n1,1,inf\n", "non-finite"),
    ("y,u,x\n1,2,0\n", "0 or 1"),
    ("y,u,x\n,1,0\n", "missing on selected"),
    ("y,u,x\n1,1\n", "fields"),
])
def test_ingest_rejections(tmp_path, body, fragment):
    path = _write(tmp_path / "d.csv", body)
    with pytest.raises(DataError, match=fragment):
        cli.ingest_csv(path, TINY_MODEL)


def test_ingest_missing_covariates_lists_rows(tmp_path):
    path = _write(tmp_path / "d.csv", "y,u,x\n1,1,\n,0,1\n2,1,\n3,1,\n")
    with pytest.raises(DataError, match=r"row\(s\) 1, 3, 4"):
        cli.ingest_csv(path, TINY_MODEL)


def test_ingest_warns_on_outcome_for_censored_row(tmp_path):
    path = _write(tmp_path / "d.csv", "y,u,x\n1,1,0\n7,0,1\n2,1,0\n")
    with pytest.warns(DataWarning, match="data row 2"):
        data = cli.ingest_csv(path, TINY_MODEL)
    assert np.isnan(data.y[1])


def test_duplicate_columns_across_blocks(tmp_path):
    path = _write(tmp_path / "d.csv", "y,u,x\n1,1,0\n,0,1\n2,1,0.5\n")
    model = dict(TINY_MODEL, dispersion_covariates=["x"], correlation_covariates=["x"])
    data = cli.ingest_csv(path, model)
    np.testing.assert_array_equal(data.X, data.Z)


# -- configuration ---------------------------------------------------------------------

def test_shipped_schema_matches_docs():
    assert json.loads((ROOT / "docs" / "runconfig.schema.json").read_text()) == cli.load_schema()


@pytest.mark.parametrize("mapping", [
    {"command": "plot"},
    {"seed": -1},
    {"generator": "cauchy"},
    {"generator": {"kind": "t_fixed", "nu": 0}},
    {"unknown": 1},
    {"model": {"outcome": "y"}},
])
def test_invalid_configs_rejected(mapping):
    with pytest.raises(ConfigError):
        cli.validate_config(mapping)


def test_resolve_overrides():
    class A:
        seed, n, nrep, scenario, out, generator, nu = 9, None, None, None, None, None, 5.0
    cfg = cli.resolve("fit", {"seed": 1, "generator": "normal"}, A())
    assert cfg.seed == 9
    assert cfg.raw["generator"] == {"kind": "t_fixed", "nu": 5.0}
    with pytest.raises(ConfigError):
        cli.resolve("fit", {"command": "simulate"})


def test_config_hash_ignores_output_dir():
    a = cli.resolve("simulate", {"seed": 3, "output_dir": "a"})
    b = cli.resolve("simulate", {"seed": 3, "output_dir": "b"})
    c = cli.resolve("simulate", {"seed": 4})
    assert a.config_hash == b.config_hash != c.config_hash


def test_render_p():
    assert cli.render_p(1e-320) == "<1e-300"
    assert cli.render_p(0.5) == 0.5
    assert cli.render_p(float("nan")) is None


# -- simulate ------------------------------------------------------------------------------

def test_simulate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert _run("simulate", "--scenario", 1, "--n", 500, "--nrep", 1, "--seed", 42,
                    "--out", tmp_path / d) == 0
    a, b = (tmp_path / d / "dataset.csv" for d in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    assert not (tmp_path / "a" / "mc_summary.csv").exists()


def test_simulated_dataset_layout(simulated):
    lines = (simulated / "dataset.csv").read_text().splitlines()
    assert lines[0].startswith("# symheckman %s seed=42 config_sha256=" % symheckman.__version__)
    assert lines[1] == "y,u,x1,x2,x3"
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 800
    assert all((r["y"] == "") == (r["u"] == "0") for r in rows)


def test_simulate_study_writes_summary(tmp_path):
    assert _run("simulate", "--scenario", 1, "--n", 300, "--nrep", 2, "--seed", 3,
                "--out", tmp_path) == 0
    with open(tmp_path / "mc_summary.csv") as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# symheckman")
    assert lines[1] == "name,true,bias,mse"
    meta = json.loads((tmp_path / "mc_summary.json").read_text())
    assert meta["nrep"] == 2 and meta["seed"] == 3 and len(meta["config_hash"]) == 64


# -- fit ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def t_report(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    status = _run("fit", "--config", simulated / "fit_config.json", "--generator", "t",
                  "--out", out)
    assert status == 0
    return out, json.loads((out / "fit_report.json").read_text())


def test_fit_report_table(t_report):
    _, report = t_report
    names = [r["name"] for r in report["estimates"]]
    for prefix, count in (("beta:", 3), ("gamma:", 4), ("lambda:", 2), ("kappa:", 2)):
        assert sum(n.startswith(prefix) for n in names) == count
    assert names[-1] == "nu"
    for row in report["estimates"]:
        assert set(row) == {"name", "estimate", "std_error", "z", "p_value"}
        assert row["std_error"] > 0
    assert report["convergence"]["converged"] is True
    assert report["aic"] == pytest.approx(-2 * report["loglik"] + 2 * len(names))
    assert report["version"] == symheckman.__version__ and report["seed"] == 42
    assert report["data"]["n"] == 800


def test_round_trip_recovers_parameters(t_report):
    _, report = t_report
    est = {r["name"]: r for r in report["estimates"]}
    truth = {"beta:x1": 0.7, "beta:x2": 0.1, "gamma:x1": 0.5, "gamma:x2": 1.1, "gamma:x3": 0.6}
    for name, value in truth.items():
        row = est[name]
        assert abs(row["estimate"] - value) < 4 * row["std_error"], name


def test_fit_residuals_csv(t_report):
    out, report = t_report
    lines = (out / "residuals.csv").read_text().splitlines()
    assert lines[0].startswith("# symheckman") and "config_sha256=%s" % report["config_hash"] in lines[0]
    assert lines[1].split(",")[:3] == ["row", "u", "residual"]
    assert len(lines) == 2 + report["data"]["n"]


def test_fit_report_is_byte_identical(simulated, tmp_path):
    for d in ("a", "b"):
        assert _run("fit", "--config", simulated / "fit_config.json", "--out", tmp_path / d) == 0
    assert ((tmp_path / "a" / "fit_report.json").read_bytes()
            == (tmp_path / "b" / "fit_report.json").read_bytes())


def test_nonconverged_exit_status(simulated, tmp_path):
    cfg = json.loads((simulated / "fit_config.json").read_text())
    cfg["data_path"] = str(simulated / "dataset.csv")
    cfg["options"] = {"max_iter": 1, "compute_se": False}
    path = _write(tmp_path / "c.json", json.dumps(cfg))
    assert _run("fit", "--config", path, "--out", tmp_path / "a") == cli.EXIT_NONCONVERGED
    report = json.loads((tmp_path / "a" / "fit_report.json").read_text())
    assert report["convergence"]["converged"] is False
    assert _run("fit", "--config", path, "--out", tmp_path / "b", "--allow-nonconverged") == 0


# -- diagnose -------------------------------------------------------------------------------

def test_diagnose_orders_by_aic(simulated, tmp_path, capsys):
    assert _run("diagnose", "--config", simulated / "fit_config.json", "--out", tmp_path) == 0
    lines = (tmp_path / "comparison.csv").read_text().splitlines()
    assert lines[0].startswith("# symheckman")
    rows = list(csv.DictReader(lines[1:]))
    aics = [float(r["aic"]) for r in rows]
    assert aics == sorted(aics)
    assert {r["model"] for r in rows} == {"normal", "t"}
    assert rows[0]["model"] == "t"
    qq = (tmp_path / "qq.csv").read_text().splitlines()
    assert "model=t" in qq[0]
    assert "t" in capsys.readouterr().out


# -- errors and exit codes ---------------------------------------------------------------------

def test_error_writes_structured_json(tmp_path, capsys):
    _write(tmp_path / "d.csv", "outcome,u\n1,1\n")
    path = _write(tmp_path / "c.json", json.dumps({"data_path": "d.csv", "model": TINY_MODEL}))
    assert _run("fit", "--config", path, "--out", tmp_path / "o") == cli.EXIT_ERROR
    err = capsys.readouterr().err
    assert len([ln for ln in err.splitlines() if ln.startswith("error:")]) == 1
    payload = json.loads((tmp_path / "o" / "error.json").read_text())
    assert payload["error"] == "DataError" and "y" in payload["message"]
    assert not (tmp_path / "o" / cli.LOCK_NAME).exists()


def test_invalid_config_file(tmp_path):
    path = _write(tmp_path / "c.json", "{not json")
    assert _run("fit", "--config", path, "--out", tmp_path / "o") == cli.EXIT_ERROR
    assert _run("fit", "--out", tmp_path / "o") == cli.EXIT_ERROR


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == cli.EXIT_USAGE


def test_locked_output_directory(tmp_path):
    (tmp_path / cli.LOCK_NAME).write_text("123")
    assert _run("simulate", "--n", 100, "--out", tmp_path) == cli.EXIT_ERROR
    assert not (tmp_path / "dataset.csv").exists()
    assert not (tmp_path / "error.json").exists()


def test_success_clears_stale_error(tmp_path):
    (tmp_path / "error.json").write_text("{}")
    assert _run("simulate", "--n", 100, "--out", tmp_path) == 0
    assert not (tmp_path / "error.json").exists()


def test_run_echoes_resolved_config(tmp_path, capsys):
    _run("simulate", "--n", 100, "--seed", 5, "--out", tmp_path)
    first = capsys.readouterr().out.splitlines()[0]
    echo = json.loads(first)
    assert echo["seed"] == 5 and echo["config"]["n"] == 100 and len(echo["config_hash"]) == 64
