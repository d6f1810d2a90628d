import json
import math
from pathlib import Path

import pytest
import yaml

from deconfounder_lab import fixtures
from deconfounder_lab.cli import main
from deconfounder_lab.errors import ConfigError, MissingMethod
from deconfounder_lab.harness import (
    COLUMNS,
    OUT_ENV,
    cells,
    compare,
    config_from_dict,
    load_config,
    load_report,
    run,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "name": "small",
    "scm": {"fixture": "class_a"},
    "k": 2,
    "queries": [{"targets": ["A1", "A2"], "values": [1, 0]}, {"targets": ["A1"], "values": [-1]}],
    "methods": ["oracle_gaussian", "deconfounder", "naive_conditional"],
    "grid": {"n": [20000, 40000], "seeds": [0, 1]},
}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    return run(config_from_dict(SMALL), out=out), out


def test_every_cell_once(small_run):
    bundle, _ = small_run
    keys = [(r["method"], r["query_id"], r["n"], r["seed"]) for r in bundle.rows]
    assert len(keys) == len(set(keys)) == 3 * 2 * 2 * 2
    assert [r["cell"] for r in bundle.rows] == list(range(len(keys)))
    assert bundle.exit_code == 0


def test_csv_schema_and_summary(small_run):
    bundle, out = small_run
    lines = (out / "results.csv").read_text().splitlines()
    assert lines[0] == "# schema=1"
    assert tuple(lines[1].split(",")) == COLUMNS
    summary = json.loads((out / "summary.json").read_text())
    assert summary["oracle"] == "oracle_gaussian" and summary["sd_y"] > 0
    assert summary["errors_vs_oracle"]["deconfounder"]["max_abs_error"] >= 0


def test_rerun_and_parallel_runs_are_byte_identical(small_run, tmp_path):
    _, out = small_run
    run(config_from_dict(SMALL), out=tmp_path / "again")
    run(config_from_dict(SMALL), out=tmp_path / "jobs", jobs=2)
    ref = (out / "results.csv").read_bytes()
    assert (tmp_path / "again" / "results.csv").read_bytes() == ref
    assert (tmp_path / "jobs" / "results.csv").read_bytes() == ref


def test_compare_verdicts(small_run):
    bundle, out = small_run
    report = load_report(out)
    tol = 0.05 * report.summary["sd_y"]
    assert compare(report, "oracle_gaussian", "deconfounder", tol).passed
    naive = compare(report, "oracle_gaussian", "naive_conditional", tol)
    assert not naive.passed
    assert compare(report, "oracle_gaussian", "naive_conditional", math.inf).passed
    with pytest.raises(MissingMethod):
        compare(report, "oracle_gaussian", "proxy_id", tol)


def test_cell_filter():
    config = config_from_dict(SMALL)
    chosen = cells(config, "deconfounder/*/n=20000/*")
    assert {c.method for c in chosen} == {"deconfounder"}
    assert len(chosen) == 2 * 2
    assert all(c.cell_id.startswith("deconfounder/") for c in chosen)
    rows = run(config, cell_filter="naive_conditional/*", write=False).rows
    assert {r["method"] for r in rows} == {"naive_conditional"}


@pytest.mark.parametrize("patch, field", [
    ({"methods": ["oracle_gaussian", "magic"]}, "methods"),
    ({"methods": ["deconfounder_selected"]}, "methods"),
    ({"methods": ["oracle_discrete"]}, "methods"),
    ({"queries": []}, "queries"),
    ({"queries": [{"targets": ["A1"], "values": [1, 2]}]}, "queries"),
    ({"grid": {"n": [], "seeds": [0]}}, "grid"),
    ({"k": 99}, "k"),
    ({"scm": {"fixture": "nowhere"}}, "scm"),
    ({"methods": ["proxy_id"]}, "partition"),
])
def test_config_errors_name_the_field(patch, field):
    with pytest.raises(ConfigError) as err:
        config_from_dict({**SMALL, **patch})
    assert err.value.field.startswith(field)


def test_shipped_configs_load():
    for path in sorted(CONFIGS.glob("*.yaml")):
        config = load_config(path)
        assert cells(config)


def write_config(tmp_path, data):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_cli_run_and_compare(tmp_path, capsys):
    cfg = write_config(tmp_path, {**SMALL, "grid": {"n": [20000], "seeds": [0]}})
    out = str(tmp_path / "out")
    assert main(["run", cfg, "--out", out]) == 0
    assert main(["compare", out, "--test", "deconfounder", "--tol", "0.05sd"]) == 0
    assert main(["compare", out, "--test", "naive_conditional", "--tol", "0.05sd"]) == 1
    assert main(["compare", out, "--test", "naive_conditional", "--tol", "inf"]) == 0
    assert main(["compare", out, "--test", "proxy_id"]) == 2
    printed = capsys.readouterr().out
    verdict, _ = json.JSONDecoder().raw_decode(printed[printed.index("{"):])
    assert verdict["passed"] is True


def test_cli_reports_cell_failures(tmp_path, capsys):
    # too few rows for the factor model; the oracle cell still completes
    cfg = write_config(tmp_path, {**SMALL, "grid": {"n": [30], "seeds": [0]},
                                  "queries": SMALL["queries"][:1]})
    assert main(["run", cfg, "--out", str(tmp_path / "out")]) == 1
    assert "FAILED deconfounder/" in capsys.readouterr().err
    rows = load_report(tmp_path / "out").rows
    failed = [r for r in rows if r["status"] == "failed"]
    assert [r["method"] for r in failed] == ["deconfounder"]
    assert failed[0]["diagnostics"]["error"] == "Underdetermined"
    assert failed[0]["diagnostics"]["cell"] == "deconfounder/A1=1,A2=0/n=30/seed=0"


def test_cli_config_error_exit(tmp_path):
    cfg = write_config(tmp_path, {**SMALL, "methods": ["nope"]})
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2


def test_env_var_sets_default_output(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "root"))
    cfg = write_config(tmp_path, {**SMALL, "grid": {"n": [5000], "seeds": [0]}})
    assert main(["run", cfg]) == 0
    assert (tmp_path / "root" / "small" / "results.csv").exists()


def test_cli_validate(tmp_path, capsys):
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump(fixtures.meal_world_selected().to_dict()))
    assert main(["validate", str(good)]) == 0
    assert json.loads(capsys.readouterr().out)["graph_class"] == "B"
    bad = fixtures.class_a().to_dict()
    for node in bad["nodes"]:
        if node["name"] == "Y":
            node["parents"] = {k: v for k, v in node["parents"].items() if not k.startswith("U")}
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(bad))
    assert main(["validate", str(path)]) == 2
