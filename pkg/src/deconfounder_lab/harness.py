"""Config-driven experiment runner.

A config names a world, a list of interventions, the methods to run and a
grid of sample sizes and seeds. Every ``(method, query, n, seed)`` cell
becomes one CSV row. All methods in the same ``(n, seed)`` group see the same
simulated sample, so estimators are compared on identical data.

In worlds with a selection node the outcome exists only for selected units;
every data-driven method except ``deconfounder_selected`` therefore trains on
the selected rows alone.
"""

from __future__ import annotations

import csv
import fnmatch
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import fixtures
from .deconfounder import estimate_do, estimate_do_selected, fit_outcome, fit_substitute, u_marginal_from
from .errors import ConfigError, InvalidSpec, LabError, MissingMethod
from .nullfn import linear_null
from .oracle import InterventionQuery, check_query, do_discrete, do_gaussian, do_monte_carlo
from .proxy import (
    CausePartition,
    empirical_discrete,
    empirical_gaussian,
    identify_discrete,
    solve_identify_gaussian,
)
from .scm import DISCRETE, LINEAR_GAUSSIAN, ScmSpec, joint_gaussian, load_spec, sample, spec_from_dict, validate_spec

SCHEMA = 1
METHODS = ("oracle_gaussian", "oracle_discrete", "oracle_mc", "proxy_id", "deconfounder",
           "deconfounder_selected", "naive_conditional")
ORACLE_PREFERENCE = ("oracle_gaussian", "oracle_discrete", "oracle_mc")
COLUMNS = ("cell", "query_id", "method", "n", "seed", "mean", "var", "se", "status", "diagnostics")
OUT_ENV = "DECONFOUNDER_LAB_OUT"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    scm: ScmSpec
    queries: tuple[InterventionQuery, ...]
    methods: tuple[str, ...]
    sizes: tuple[int, ...]
    seeds: tuple[int, ...]
    k: int = 1
    partition: CausePartition | None = None
    u_sng: tuple[str, ...] = ()
    output: str | None = None
    digest: str = ""
    name: str = "experiment"


def _field(data: Mapping[str, Any], key: str, default: Any = ...) -> Any:
    if key in data:
        return data[key]
    if default is ...:
        raise ConfigError(key, "missing required field")
    return default


def _resolve_scm(raw: Any, base: Path) -> ScmSpec:
    try:
        if isinstance(raw, str):
            path = (base / raw) if not Path(raw).is_absolute() else Path(raw)
            if not path.exists():
                raise ConfigError("scm", f"fixture file {raw!r} not found")
            return load_spec(path)
        if isinstance(raw, Mapping) and "fixture" in raw:
            return fixtures.by_name(raw["fixture"])
        if isinstance(raw, Mapping):
            return spec_from_dict(raw)
    except (InvalidSpec, KeyError, TypeError, ValueError) as exc:
        raise ConfigError("scm", str(exc)) from None
    raise ConfigError("scm", "expected a path, {fixture: name} or an inline spec")


def _partition(raw: Mapping[str, Any] | None) -> CausePartition | None:
    if raw is None:
        return None
    try:
        f = None
        if "f" in raw and raw["f"] is not None:
            f = linear_null(raw["N"], np.asarray(raw["f"]["weights"], dtype=float), raw["f"].get("description", ""))
        return CausePartition(tuple(raw["C"]), tuple(raw["X"]), tuple(raw["N"]), f)
    except (KeyError, LabError, ValueError) as exc:
        raise ConfigError("partition", str(exc)) from None


def config_from_dict(data: Mapping[str, Any], base: str | Path = ".") -> ExperimentConfig:
    """Validate and normalise a config tree; errors name the offending field."""
    if not isinstance(data, Mapping):
        raise ConfigError("<root>", "config must be a mapping")
    spec = _resolve_scm(_field(data, "scm"), Path(base))
    try:
        validate_spec(spec)
    except InvalidSpec as exc:
        raise ConfigError("scm", str(exc)) from None

    methods = tuple(_field(data, "methods"))
    if not methods:
        raise ConfigError("methods", "at least one method is required")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError("methods", f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    if "deconfounder_selected" in methods and spec.selection is None:
        raise ConfigError("methods", "deconfounder_selected requires a selection node in the scm")
    if "oracle_gaussian" in methods and spec.mechanism != LINEAR_GAUSSIAN:
        raise ConfigError("methods", "oracle_gaussian needs a linear-Gaussian scm")
    if "oracle_discrete" in methods and spec.mechanism != DISCRETE:
        raise ConfigError("methods", "oracle_discrete needs a discrete scm")

    raw_q = _field(data, "queries")
    if not raw_q:
        raise ConfigError("queries", "at least one query is required")
    queries = []
    for i, q in enumerate(raw_q):
        try:
            query = InterventionQuery(tuple(q["targets"]), tuple(q["values"]), q.get("response"))
            check_query(spec, query)
        except (KeyError, TypeError, LabError) as exc:
            raise ConfigError(f"queries[{i}]", str(exc)) from None
        queries.append(query)

    grid = _field(data, "grid")
    sizes = tuple(int(n) for n in _field(grid, "n"))
    seeds = tuple(int(s) for s in _field(grid, "seeds"))
    if not sizes or not seeds or min(sizes) <= 0:
        raise ConfigError("grid", "need non-empty positive sample sizes and seeds")

    partition = _partition(data.get("partition"))
    if partition is not None:
        try:
            partition.check_covers(spec.causes)
        except LabError as exc:
            raise ConfigError("partition", str(exc)) from None
    if "proxy_id" in methods and partition is None:
        raise ConfigError("partition", "proxy_id needs a cause partition")
    k = int(data.get("k", 1))
    if not 1 <= k < len(spec.causes):
        raise ConfigError("k", f"latent dimension must be in [1, {len(spec.causes) - 1}]")
    u_sng = tuple(data.get("u_sng", ()))
    missing = [u for u in u_sng if u not in spec.names]
    if missing:
        raise ConfigError("u_sng", f"unknown variables {missing}")

    canonical = {
        "scm": spec.to_dict(), "queries": [q.to_dict() for q in queries], "methods": list(methods),
        "grid": {"n": list(sizes), "seeds": list(seeds)}, "k": k,
        "partition": None if partition is None else partition.to_dict(), "u_sng": list(u_sng),
    }
    digest = hashlib.sha256(json.dumps(canonical, sort_keys=True).encode()).hexdigest()
    return ExperimentConfig(spec, tuple(queries), methods, sizes, seeds, k, partition, u_sng,
                            data.get("output"), digest, str(data.get("name", "experiment")))


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError("config", f"{path} does not exist")
    try:
        text = p.read_text()
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("config", f"unparseable: {exc}") from None
    return config_from_dict(data, p.parent)


# ---------------------------------------------------------------------------
# cells


@dataclass(frozen=True)
class Cell:
    index: int
    method: str
    query: InterventionQuery
    n: int
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.method}/{self.query.query_id}/n={self.n}/seed={self.seed}"


def cells(config: ExperimentConfig, pattern: str | None = None) -> list[Cell]:
    out, idx = [], 0
    for method in config.methods:
        for q in config.queries:
            for n in config.sizes:
                for seed in config.seeds:
                    c = Cell(idx, method, q, n, seed)
                    idx += 1
                    if pattern is None or fnmatch.fnmatchcase(c.cell_id, pattern):
                        out.append(c)
    return out


def _derived_seed(digest: str, *parts: int) -> int:
    entropy = [int(digest[i:i + 8], 16) for i in range(0, 32, 8)] + [int(p) for p in parts]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _observed(data: Any) -> Any:
    """Rows whose outcome is observed (the selected units in censored data)."""
    return data.take(np.flatnonzero(data.outcome_observed), provenance="selected") if data.selected is not None else data


class _Group:
    """Shared sample and fitted models for one (n, seed) grid point."""

    def __init__(self, config: ExperimentConfig, n: int, seed: int):
        self.config, self.n, self.seed = config, n, seed
        self.data_seed = _derived_seed(config.digest, n, seed)
        self._cache: dict[str, Any] = {}

    def get(self, key: str, build: Any) -> Any:
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def data(self) -> Any:
        view = "selected_outcome" if self.config.scm.selection else "full"
        return self.get("data", lambda: sample(self.config.scm, self.n, self.data_seed, view))


def _row(cell: Cell, mean: float, var: float, se: float, status: str = "ok", diag: dict | None = None) -> dict[str, Any]:
    return {"cell": cell.index, "query_id": cell.query.query_id, "method": cell.method, "n": cell.n,
            "seed": cell.seed, "mean": float(mean), "var": float(var), "se": float(se), "status": status,
            "diagnostics": diag or {}}


def _run_method(cell: Cell, g: _Group) -> dict[str, Any]:
    cfg, spec, q = g.config, g.config.scm, cell.query
    if cell.method == "oracle_gaussian":
        d = do_gaussian(spec, q)
        return _row(cell, d.mean[0], d.cov[0, 0], 0.0)
    if cell.method == "oracle_discrete":
        d = do_discrete(spec, q)
        return _row(cell, d.mean(), d.var(), 0.0, diag={"pmf": d.pmf.tolist()})
    if cell.method == "oracle_mc":
        s = do_monte_carlo(spec, q, cell.n, _derived_seed(cfg.digest, 1_000_000 + cell.index))
        diag = {"pmf": s.pmf} if s.pmf is not None else {}
        return _row(cell, s.mean, s.var, s.se, diag=diag)
    if cell.method == "naive_conditional":
        obs = g.get("observed", lambda: _observed(g.data))
        A = obs.matrix(q.targets)
        X = np.column_stack([np.ones(obs.n), A])
        y = obs.column(obs.outcome_name)
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        rv = float(resid @ resid / max(obs.n - X.shape[1], 1))
        x0 = np.concatenate([[1.0], q.values])
        se = float(np.sqrt(rv * x0 @ np.linalg.pinv(X.T @ X) @ x0))
        return _row(cell, x0 @ coef, rv, se)
    if cell.method == "deconfounder":
        obs = g.get("observed", lambda: _observed(g.data))
        sub = g.get("sub_obs", lambda: fit_substitute(obs, cfg.k))
        out = g.get("out_obs", lambda: fit_outcome(obs, sub, bool(cfg.u_sng), u_sng=cfg.u_sng, seed=g.data_seed))
        um = u_marginal_from(obs, cfg.u_sng) if cfg.u_sng else None
        est = estimate_do(sub, out, q, u_sng_marginal=um)
        return _row(cell, est.mean, est.variance, est.mc_se, diag=_em_diag(sub, est.diagnostics))
    if cell.method == "deconfounder_selected":
        data = g.data
        sub = g.get("sub_full", lambda: fit_substitute(data, cfg.k))
        out = g.get("out_sel", lambda: fit_outcome(data, sub, bool(cfg.u_sng), u_sng=cfg.u_sng, seed=g.data_seed))
        um = u_marginal_from(data, cfg.u_sng) if cfg.u_sng else None
        est = estimate_do_selected(sub, out, um, q)
        return _row(cell, est.mean, est.variance, est.mc_se, diag=_em_diag(sub, est.diagnostics))
    if cell.method == "proxy_id":
        return _proxy(cell, g)
    raise ConfigError("methods", f"unknown method {cell.method}")


def _em_diag(sub: Any, diag: dict[str, Any]) -> dict[str, Any]:
    steps = np.diff(sub.fit_log)
    return {**diag, "em_monotone": bool(np.all(steps >= -1e-10)), "em_iterations": len(sub.fit_log) - 1}


def _proxy(cell: Cell, g: _Group) -> dict[str, Any]:
    cfg, spec, q, part = g.config, g.config.scm, cell.query, g.config.partition
    data = g.data
    y = spec.outcome
    observed = [y, *spec.causes, *cfg.u_sng]
    if spec.mechanism == DISCRETE:
        cards = {nm: spec.node(nm).card for nm in observed}
        sel = _observed(data)
        joint_sel = empirical_discrete(sel.matrix(observed), observed, cards)
        marg_names = [*spec.causes, *cfg.u_sng]
        marginals = empirical_discrete(data.matrix(marg_names), marg_names, cards)
        res = identify_discrete(joint_sel, part, q, u_sng=list(cfg.u_sng) or None, marginals=marginals, response=y)
        pmf = res.pmf.pmf
        k = np.arange(pmf.size)
        mean = float(k @ pmf)
        return _row(cell, mean, float(k**2 @ pmf - mean**2), 0.0,
                    diag={"pmf": pmf.tolist(), "residual": res.kernel.residual})
    obs = _observed(data)
    dist = empirical_gaussian(obs.matrix([y, *spec.causes]), [y, *spec.causes])
    out = solve_identify_gaussian(dist, part, q, response=y)
    return _row(cell, out.mean[0], out.cov[0, 0], 0.0)


def _run_group(config: ExperimentConfig, n: int, seed: int, group_cells: list[Cell]) -> list[dict[str, Any]]:
    g = _Group(config, n, seed)
    rows = []
    for cell in group_cells:
        try:
            rows.append(_run_method(cell, g))
        except LabError as exc:
            rows.append(_row(cell, math.nan, math.nan, math.nan, "failed",
                             {"error": type(exc).__name__, "message": str(exc), "cell": cell.cell_id}))
    return rows


# ---------------------------------------------------------------------------
# reports


@dataclass
class ReportBundle:
    rows: list[dict[str, Any]]
    summary: dict[str, Any]
    csv_path: Path | None = None
    summary_path: Path | None = None

    @property
    def exit_code(self) -> int:
        return 0 if all(r["status"] == "ok" for r in self.rows) else 1

    def methods(self) -> set[str]:
        return {r["method"] for r in self.rows}


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, dict):
        return json.dumps(v, sort_keys=True, separators=(",", ":"))
    return str(v)


def rows_to_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema={SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in COLUMNS])
    return buf.getvalue()


def read_csv(path: str | Path) -> list[dict[str, Any]]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# schema="):
        raise ConfigError("report", "missing schema header line")
    reader = csv.DictReader(lines[1:])
    rows = []
    for r in reader:
        rows.append({
            "cell": int(r["cell"]), "query_id": r["query_id"], "method": r["method"], "n": int(r["n"]),
            "seed": int(r["seed"]), "mean": float(r["mean"]), "var": float(r["var"]), "se": float(r["se"]),
            "status": r["status"], "diagnostics": json.loads(r["diagnostics"]),
        })
    return rows


def _oracle_method(methods: set[str]) -> str | None:
    return next((m for m in ORACLE_PREFERENCE if m in methods), None)


def _match(rows: list[dict[str, Any]], method: str) -> dict[tuple, dict[str, Any]]:
    return {(r["query_id"], r["n"], r["seed"]): r for r in rows if r["method"] == method}


def _errors(rows: list[dict[str, Any]], baseline: str, test: str) -> dict[str, list[float]]:
    base = _match(rows, baseline)
    # exact oracles do not depend on (n, seed), so any row for the query will do
    by_query: dict[str, dict[str, Any]] = {}
    for b in rows:
        if b["method"] == baseline:
            by_query.setdefault(b["query_id"], b)
    out: dict[str, list[float]] = {}
    for r in rows:
        if r["method"] != test:
            continue
        b = base.get((r["query_id"], r["n"], r["seed"])) or by_query.get(r["query_id"])
        if b is None:
            continue
        ok = r["status"] == "ok" and b["status"] == "ok"
        out.setdefault(r["query_id"], []).append(abs(r["mean"] - b["mean"]) if ok else math.inf)
    return out


def summarize(rows: list[dict[str, Any]], config: ExperimentConfig) -> dict[str, Any]:
    methods = {r["method"] for r in rows}
    oracle = _oracle_method(methods)
    sd_y = None
    if config.scm.mechanism == LINEAR_GAUSSIAN:
        sd_y = joint_gaussian(config.scm).sd(config.scm.outcome)
    per_method: dict[str, Any] = {}
    if oracle:
        for m in sorted(methods - {oracle}):
            errs = _errors(rows, oracle, m)
            flat = [e for v in errs.values() for e in v]
            per_method[m] = {
                "max_abs_error": max(flat) if flat else None,
                "per_query": {k: max(v) for k, v in errs.items()},
            }
    failures = [r["diagnostics"].get("cell") for r in rows if r["status"] != "ok"]
    return {
        "schema": SCHEMA, "name": config.name, "config_hash": config.digest, "cells": len(rows),
        "failures": failures, "oracle": oracle, "sd_y": sd_y, "errors_vs_oracle": per_method,
    }


def default_output(config: ExperimentConfig) -> Path:
    root = Path(os.environ.get(OUT_ENV, "results"))
    return Path(config.output) if config.output else root / config.name


def run(config: ExperimentConfig, *, out: str | Path | None = None, jobs: int = 1,
        cell_filter: str | None = None, write: bool = True) -> ReportBundle:
    """Execute every selected cell and write ``results.csv`` plus ``summary.json``."""
    selected = cells(config, cell_filter)
    groups: dict[tuple[int, int], list[Cell]] = {}
    for c in selected:
        groups.setdefault((c.n, c.seed), []).append(c)
    keys = sorted(groups)
    if jobs > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_group, config, n, s, groups[(n, s)]) for n, s in keys]
            results = [f.result() for f in futures]
    else:
        results = [_run_group(config, n, s, groups[(n, s)]) for n, s in keys]
    rows = sorted((r for rs in results for r in rs), key=lambda r: r["cell"])
    bundle = ReportBundle(rows, summarize(rows, config))
    if write:
        target = Path(out) if out else default_output(config)
        target.mkdir(parents=True, exist_ok=True)
        bundle.csv_path = target / "results.csv"
        bundle.summary_path = target / "summary.json"
        bundle.csv_path.write_text(rows_to_csv(rows))
        bundle.summary_path.write_text(json.dumps(bundle.summary, indent=2, sort_keys=True, default=float) + "\n")
    return bundle


def load_report(path: str | Path) -> ReportBundle:
    """Read a report directory (or its results.csv) written by :func:`run`."""
    p = Path(path)
    csv_path = p / "results.csv" if p.is_dir() else p
    if not csv_path.exists():
        raise ConfigError("report", f"{csv_path} not found")
    summary_path = csv_path.parent / "summary.json"
    summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
    return ReportBundle(read_csv(csv_path), summary, csv_path, summary_path if summary else None)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    tolerance: float
    per_query: dict[str, dict[str, Any]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "tolerance": self.tolerance, "per_query": self.per_query}


def compare(report: ReportBundle, baseline_method: str, test_method: str, tolerance: float) -> Verdict:
    """Per-query worst-case |test - baseline| against ``tolerance``."""
    present = report.methods()
    for m in (baseline_method, test_method):
        if m not in present:
            raise MissingMethod(f"method {m!r} not in report (have {sorted(present)})")
    errs = _errors(report.rows, baseline_method, test_method)
    per_query = {q: {"worst_error": max(v), "passed": max(v) <= tolerance} for q, v in errs.items()}
    passed = bool(per_query) and all(v["passed"] for v in per_query.values())
    return Verdict(passed, tolerance, per_query)
