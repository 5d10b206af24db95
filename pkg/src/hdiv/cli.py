"""Command-line interface.

Two subcommands:

* ``test``      run the instrument-validity test (and the treatment-effect
                estimate) on a CSV file, writing a JSON report, a text
                summary, and a per-instrument figure.
* ``simulate``  run a Monte Carlo experiment described by a flat JSON config
                file, writing CSV tables, a JSON summary, and a figure.

Exit codes are stable per error class:

    0  completed (regardless of the test decision)
    2  configuration / usage error
    3  input parse error
    4  degenerate data (constant column, all-zero instrument)
    5  weak instruments (test aborted with diagnostics)
    6  numerical solver failure
    7  I/O failure

``HDIV_THREADS`` caps the simulation worker pool.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import ColumnSpec, load_dataset, standardize
from .errors import (
    ConfigError,
    DegenerateDataError,
    HdivError,
    ParseError,
    SolverError,
    WeakInstrumentError,
)
from .overid import OveridConfig, run_overid_test
from .simulation import (
    SimConfig,
    run_beta_table,
    run_power_curve,
    run_size_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_DEGENERATE = 4
EXIT_WEAK = 5
EXIT_SOLVER = 6
EXIT_IO = 7

_ERROR_EXITS = (
    (ParseError, EXIT_PARSE, "input parsing"),
    (DegenerateDataError, EXIT_DEGENERATE, "data validation"),
    (WeakInstrumentError, EXIT_WEAK, "instrument-strength screening"),
    (SolverError, EXIT_SOLVER, "numerical solver"),
    (ConfigError, EXIT_CONFIG, "configuration"),
)


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _comma_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hdiv",
        description="Instrument-validity testing and treatment-effect estimation "
                    "for high-dimensional IV models",
    )
    parser.add_argument("--version", action="version", version=f"hdiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run the validity test on a CSV file")
    t.add_argument("--input", required=True, help="CSV file with a header row")
    t.add_argument("--outcome", required=True, help="outcome column name")
    t.add_argument("--treatment", required=True, help="endogenous treatment column name")
    t.add_argument("--instruments", required=True,
                   help="comma-separated instrument column names (at least two)")
    t.add_argument("--covariates", default=None,
                   help="comma-separated covariate columns; default: every "
                        "remaining column (unlisted columns are ignored when given)")
    t.add_argument("--unpenalized", default="",
                   help="comma-separated columns exempt from the L1 penalty")
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--draws", type=int, default=2000,
                   help="number of multiplier draws for the critical value")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--c-omega", type=float, default=2.0, dest="c_omega",
                   help="constant of the precision-matrix tuning value")
    t.add_argument("--no-standardize", action="store_true",
                   help="skip standardization of all columns (default: on)")
    t.add_argument("--out", default="hdiv_report", help="output directory")

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    s.add_argument("config", help="flat JSON config file (strict keys)")
    s.add_argument("--out", default=None, help="output directory (overrides config)")
    s.add_argument("--seed", type=int, default=None, help="override the master seed")
    s.add_argument("--replications", type=int, default=None)
    s.add_argument("--workers", type=int, default=None)
    return parser


def cmd_test(args) -> int:
    t_start = time.perf_counter()
    spec = ColumnSpec(
        outcome=args.outcome,
        treatment=args.treatment,
        instruments=_comma_list(args.instruments),
        covariates=_comma_list(args.covariates) if args.covariates is not None else None,
        unpenalized=_comma_list(args.unpenalized),
    )
    data = load_dataset(args.input, spec)
    standardized = not args.no_standardize
    if standardized:
        data = standardize(data)
    config = OveridConfig(
        alpha=args.alpha, n_draws=args.draws, seed=args.seed, c_omega=args.c_omega
    )
    report = run_overid_test(data, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    document = {
        "version": __version__,
        "config": {
            "input": str(args.input),
            "outcome": args.outcome,
            "treatment": args.treatment,
            "instruments": list(data.z_names),
            "covariates": list(data.x_names),
            "unpenalized": _comma_list(args.unpenalized),
            "alpha": args.alpha,
            "n_draws": args.draws,
            "seed": args.seed,
            "c_omega": args.c_omega,
            "standardize": standardized,
        },
        "standardization_note": (
            "all columns standardized to mean 0 / sd 1 (divisor n-1), outcome "
            "and treatment included" if standardized else "raw data used"
        ),
        "n": data.n,
        "p_x": data.p_x,
        "p_z": data.p_z,
        "test": {k: v for k, v in dataclasses.asdict(report).items() if k != "beta"},
        "beta": dataclasses.asdict(report.beta),
        "timing_seconds": round(time.perf_counter() - t_start, 3),
    }
    _write_json(out / "report.json", document)
    (out / "summary.txt").write_text(_text_summary(args, data, report), encoding="utf-8")

    from . import figures

    figures.instrument_figure(data.z_names, report.weighted_tilde, report.cv,
                              report.alpha, out / "instruments.png")
    print(f"report written to {out}")
    return EXIT_OK


def _text_summary(args, data, report) -> str:
    beta = report.beta
    decision = "REJECT instrument validity" if report.reject_pm else "no rejection"
    iv_set = ",".join(data.z_names)
    if len(iv_set) > 48:
        iv_set = iv_set[:45] + "..."
    lines = [
        "Instrument validity test (power-enhanced max test)",
        "=" * 60,
        f"input: {args.input}   n={data.n}  p_x={data.p_x}  p_z={data.p_z}",
        f"standardized: {'no' if args.no_standardize else 'yes (all columns)'}",
        "",
        f"{'Instrument set':<50}{'M':>8}{'PM':>8}",
        f"{iv_set:<50}{report.p_value_m:>8.3f}{report.p_value_pm:>8.3f}",
        "",
        f"max statistic        = {report.m_stat:.4f}",
        f"quadratic statistic  = {report.q_stat:.4f}",
        f"critical value       = {report.cv:.4f} "
        f"(alpha={report.alpha:g}, {report.n_draws} draws)",
        f"decision             : {decision} at level {report.alpha:g}",
        f"strength proxy       = {report.q_hat_gamma:.5f}",
        f"relatedness estimate = {report.relatedness_hat:.4f}",
    ]
    if not beta.weak_flag:
        lines.append(
            f"treatment effect     = {beta.beta_hat:.5f}  "
            f"CI[{1 - beta.alpha:.0%}] = ({beta.ci[0]:.5f}, {beta.ci[1]:.5f})"
        )
    lines.append("")
    return "\n".join(lines)


_SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)} | {"experiment", "rho_grid", "out"}


def cmd_simulate(args) -> int:
    t_start = time.perf_counter()
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a JSON object")
    unknown = set(raw) - _SIM_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    experiment = raw.pop("experiment", "size")
    if experiment not in ("size", "power", "beta"):
        raise ConfigError(f"unknown experiment {experiment!r}")
    rho_grid = raw.pop("rho_grid", None)
    out = Path(args.out or raw.pop("out", "hdiv_simulation"))
    raw.pop("out", None)
    for key, val in (("seed", args.seed), ("replications", args.replications),
                     ("workers", args.workers)):
        if val is not None:
            raw[key] = val
    try:
        config = SimConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    out.mkdir(parents=True, exist_ok=True)
    from . import figures

    if experiment == "power":
        if rho_grid is None:
            raise ConfigError("power experiments need a rho_grid")
        result = run_power_curve(config, rho_grid)
        header, rows = result.to_rows()
        _write_csv(out / "power_curve.csv", header, rows)
        figures.power_curve_figure(result, out / "power_curve.png")
    elif experiment == "beta":
        result = run_beta_table(config)
        header, rows = result.to_rows()
        _write_csv(out / "beta_table.csv", header, rows)
        figures.beta_figure(result, out / "beta.png")
    else:
        result = run_size_experiment(config)
        header, rows = result.to_rows()
        _write_csv(out / "size_table.csv", header, rows)
        figures.size_figure(result, out / "size.png")

    summary = {
        "version": __version__,
        "experiment": experiment,
        "config": dataclasses.asdict(config),
        "result": dataclasses.asdict(result),
        "timing_seconds": round(time.perf_counter() - t_start, 3),
    }
    _write_json(out / "summary.json", summary)
    print(f"{experiment} experiment written to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "test":
            return cmd_test(args)
        return cmd_simulate(args)
    except HdivError as exc:
        for klass, code, stage in _ERROR_EXITS:
            if isinstance(exc, klass):
                print(f"error [{stage}]: {exc}", file=sys.stderr)
                return code
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error [i/o]: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
