"""``deconfounder-lab`` command line: run, compare and validate."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .errors import ConfigError, InvalidSpec, LabError, MissingMethod
from .harness import OUT_ENV, compare, load_config, load_report, run
from .scm import load_spec, validate_spec

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _tolerance(text: str, sd_y: float | None) -> float:
    """``0.05`` is absolute; ``0.05sd`` is relative to the outcome SD."""
    if text.endswith("sd"):
        if sd_y is None:
            raise ConfigError("tol", "relative tolerance needs sd_y in the report summary")
        return float(text[:-2]) * sd_y
    return float(text)


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    bundle = run(config, out=args.out, jobs=args.jobs, cell_filter=args.cells)
    failed = [r for r in bundle.rows if r["status"] != "ok"]
    print(f"{len(bundle.rows)} cells, {len(failed)} failed -> {bundle.csv_path}")
    for r in failed:
        d = r["diagnostics"]
        print(f"  FAILED {d.get('cell')}: {d.get('error')}: {d.get('message')}", file=sys.stderr)
    return bundle.exit_code


def _cmd_compare(args: argparse.Namespace) -> int:
    report = load_report(args.report)
    tol = _tolerance(args.tol, report.summary.get("sd_y"))
    verdict = compare(report, args.baseline, args.test, tol)
    print(json.dumps(verdict.to_dict(), indent=2, default=float))
    return EXIT_OK if verdict.passed else EXIT_FAILURE


def _cmd_validate(args: argparse.Namespace) -> int:
    spec = load_spec(args.spec)
    report = validate_spec(spec, strict=False)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.passed else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deconfounder-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<name> or results/<name>)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--cells", help="glob over cell ids such as 'deconfounder/*/n=1000/*'")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="check a method against a baseline in a report")
    c.add_argument("report", help="report directory or results.csv")
    c.add_argument("--baseline", default="oracle_gaussian")
    c.add_argument("--test", required=True)
    c.add_argument("--tol", default="0.05sd", help="absolute, or suffixed with 'sd' for a multiple of SD(Y)")
    c.set_defaults(func=_cmd_compare)

    v = sub.add_parser("validate", help="check an SCM file against the role rules")
    v.add_argument("spec")
    v.set_defaults(func=_cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidSpec, MissingMethod) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
