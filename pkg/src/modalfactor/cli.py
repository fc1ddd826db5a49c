"""Command-line interface: ``modalfactor {estimate,select,simulate,infer,forecast,replay}``.

Every flag may also be set through an environment variable named
``MODALFACTOR_<FLAG>`` (upper case, dashes as underscores), e.g.
``MODALFACTOR_BANDWIDTH_CONSTANT=4``. Explicit flags win over the environment.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
Each run writes ``<out>.manifest.json`` next to its main output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, amem, forecast, inference, selection, simulate
from .amem import EstimationConfig
from .core import Panel, inference_bandwidth, read_panel_csv
from .errors import ConfigError, DataError, ModalFactorError, NumericalError

ENV_PREFIX = "MODALFACTOR_"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("modalfactor")


# ---------------------------------------------------------------- parser

def _common(p):
    g = p.add_argument_group("estimation")
    g.add_argument("--bandwidth-constant", type=float, default=5.0, help="bandwidth constant c (default 5)")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--starts", type=int, default=2, help="number of random starts (default 2)")
    g.add_argument("--epsilon", type=float, default=1e-6, help="outer stopping tolerance (default 1e-6)")
    g.add_argument("--max-sweeps", type=int, default=200, help="outer sweep limit (default 200)")
    g.add_argument("--threads", type=int, default=1, help="worker processes; never changes results")
    g.add_argument("--verbose", action="store_true", help="log every sweep objective to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="modalfactor", description="Modal factor analysis toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit a modal factor model to a panel CSV")
    p.add_argument("panel", help="time-major CSV: header of series names, one row per period")
    p.add_argument("-r", "--factors", type=int, required=True, help="number of factors")
    p.add_argument("-o", "--out", required=True, help="output JSON path")
    _common(p)

    p = sub.add_parser("select", help="choose the number of factors")
    p.add_argument("panel")
    p.add_argument("--rmax", type=int, default=8, help="largest candidate r (default 8)")
    p.add_argument("--method", default="both", help="rank, ic or both (default both)")
    p.add_argument("-o", "--out", required=True, help="output JSON path")
    _common(p)

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    p.add_argument("config", help="study configuration JSON")
    p.add_argument("-o", "--out", required=True, help="summary CSV path; replications go to <out>.replications.csv")
    p.add_argument("--rmax", type=int, default=None, help="override the study's r_max")
    _common(p)
    # estimation flags left unset defer to the study file
    p.set_defaults(bandwidth_constant=None, seed=None, starts=None, epsilon=None, max_sweeps=None)

    p = sub.add_parser("infer", help="pointwise confidence intervals for the factors")
    p.add_argument("panel")
    p.add_argument("-r", "--factors", type=int, required=True)
    p.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    p.add_argument("--periods", default="", help="comma-separated 0-based periods (default: all)")
    p.add_argument("-o", "--out", required=True, help="output CSV path")
    _common(p)

    p = sub.add_parser("forecast", help="rolling-window factor-augmented forecasts")
    p.add_argument("panel")
    tg = p.add_mutually_exclusive_group(required=True)
    tg.add_argument("--target", help="name of the target column in the panel CSV")
    tg.add_argument("--target-csv", help="single-column CSV holding the target series")
    p.add_argument("--spec", default="", help="forecast spec JSON (horizon, window, p_max, ...)")
    p.add_argument("--tcodes", default="", help="JSON map series name -> transform code 1..7")
    p.add_argument("--rmax", type=int, default=None, help="override the spec's r_max")
    p.add_argument("-o", "--out", required=True, help="report JSON path; per-date CSV at <out>.csv")
    _common(p)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--out", default=None, help="write outputs here instead of the recorded path")
    return ap


def _subparsers(ap):
    for a in ap._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices
    return {}


def _apply_env(ap, environ):
    """Replace option defaults with MODALFACTOR_* environment values."""
    for sp in _subparsers(ap).values():
        for a in sp._actions:
            if not a.option_strings or a.dest in ("help", "out"):
                continue
            key = ENV_PREFIX + a.dest.upper()
            if key not in environ:
                continue
            val = environ[key]
            if isinstance(a, argparse._StoreTrueAction):
                a.default = val.strip().lower() in ("1", "true", "yes", "on")
                continue
            try:
                a.default = a.type(val) if a.type else val
            except ValueError as exc:
                raise ConfigError(f"{key}={val!r}: {exc}") from exc
            a.required = False


def _canonical_argv(ap, args) -> list[str]:
    """Fully resolved argv (positionals and every option) for reproduction."""
    sp = _subparsers(ap)[args.command]
    argv = [args.command]
    for a in sp._actions:
        if a.dest == "help":
            continue
        val = getattr(args, a.dest, None)
        if not a.option_strings:
            argv.append(str(val))
        elif isinstance(a, argparse._StoreTrueAction):
            if val:
                argv.append(a.option_strings[-1])
        elif val is not None and val != "":
            argv += [a.option_strings[-1], repr(val) if isinstance(val, float) else str(val)]
    return argv


# ---------------------------------------------------------------- helpers

def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config(args, r=1) -> EstimationConfig:
    return EstimationConfig(
        n_factors=r,
        bandwidth_constant=args.bandwidth_constant,
        outer_epsilon=args.epsilon,
        outer_max_sweeps=args.max_sweeps,
        n_starts=args.starts,
        seed=args.seed,
    )


def _read_panel(path) -> Panel:
    try:
        return read_panel_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} {path} is not valid JSON: {exc}") from exc


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def manifest_path(out) -> Path:
    return Path(str(out) + ".manifest.json")


def _write_manifest(ap, args, config, inputs, outputs):
    man = {
        "command": args.command,
        "argv": _canonical_argv(ap, args),
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    _write_json(man, manifest_path(args.out))


# ---------------------------------------------------------------- commands

def cmd_estimate(args):
    panel = _read_panel(args.panel)
    cfg = _config(args, args.factors)
    res = amem.fit(panel, cfg)
    _write_json(res.to_dict(), args.out)
    print(f"r={cfg.n_factors} objective={res.objective_value:.10g} sweeps={res.n_sweeps} "
          f"converged={res.converged}")
    return asdict(cfg), [args.panel], [args.out]


def cmd_select(args):
    if args.method.lower() not in ("rank", "ic", "both"):
        raise ConfigError(f"unknown selection method {args.method!r}; use rank, ic or both")
    panel = _read_panel(args.panel)
    cfg = _config(args)
    rep = selection.select_factors(panel, args.rmax, cfg, method=args.method.lower())
    _write_json(rep.to_dict(), args.out)
    print(f"{'r':>3} {'sigma':>14} {'threshold':>14} {'IC':>14} {'penalty':>14}")
    for r, *vals in rep.table():
        print(f"{r:>3} " + " ".join(f"{v:>14.6g}" if v is not None else f"{'-':>14}" for v in vals))
    print(f"r_rank={rep.r_rank} r_ic={rep.r_ic}")
    return {**asdict(cfg), "r_max": args.rmax, "method": args.method.lower()}, [args.panel], [args.out]


def cmd_simulate(args):
    overrides = {
        "bandwidth_constant": args.bandwidth_constant, "outer_epsilon": args.epsilon,
        "outer_max_sweeps": args.max_sweeps, "n_starts": args.starts, "seed": args.seed,
        "r_max": args.rmax,
    }
    try:
        Path(args.config).stat()
    except OSError as exc:
        raise DataError(f"cannot read study config {args.config}: {exc}") from exc
    study = simulate.load_study_config(args.config, overrides)
    # record the resolved values so the manifest argv is self-contained
    args.bandwidth_constant = study.cfg.bandwidth_constant
    args.seed, args.starts = study.cfg.seed, study.cfg.n_starts
    args.epsilon, args.max_sweeps, args.rmax = study.cfg.outer_epsilon, study.cfg.outer_max_sweeps, study.r_max
    results = simulate.run_study(study.specs, study.methods, study.metrics, study.cfg, study.S,
                                 study.r_max, workers=args.threads, level=study.level)
    reps = str(args.out) + ".replications.csv"
    simulate.write_summary_csv(results, args.out)
    simulate.write_replications_csv(results, reps)
    for row in simulate.summary_rows(results):
        print(",".join(row))
    config = {
        "specs": [asdict(s) for s in study.specs], "methods": list(study.methods),
        "metrics": list(study.metrics), "S": study.S, "r_max": study.r_max,
        "level": study.level, "estimation": asdict(study.cfg),
    }
    return config, [args.config], [args.out, reps]


def cmd_infer(args):
    panel = _read_panel(args.panel)
    cfg = _config(args, args.factors)
    periods = [int(p) for p in args.periods.split(",") if p.strip()] or None
    h = inference_bandwidth(panel.n_periods, cfg.bandwidth_constant)
    res = amem.fit(panel, cfg, h=h)
    rows = inference.factor_intervals(panel, res, h, args.level, periods)
    inference.write_ci_csv(rows, args.out)
    print(f"wrote {len(rows)} intervals (h={h:.6g}, level={args.level})")
    return {**asdict(cfg), "bandwidth": h, "level": args.level, "periods": periods}, [args.panel], [args.out]


def cmd_forecast(args):
    panel = _read_panel(args.panel)
    inputs = [args.panel]
    spec_d = _read_json(args.spec, "forecast spec") if args.spec else {}
    if not isinstance(spec_d, dict):
        raise ConfigError("forecast spec must be a JSON object")
    if args.spec:
        inputs.append(args.spec)
    spec_d.setdefault("bandwidth_constant", args.bandwidth_constant)
    if args.rmax is not None:
        spec_d["r_max"] = args.rmax
    if "splits" in spec_d:
        spec_d["splits"] = tuple(spec_d["splits"])
    spec = forecast.ForecastSpec.from_dict(spec_d)
    codes = {}
    if args.tcodes:
        codes = _read_json(args.tcodes, "transform code map")
        if not isinstance(codes, dict):
            raise ConfigError("transform code map must be a JSON object")
        inputs.append(args.tcodes)
    if args.target_csv:
        y = _read_panel(args.target_csv)
        if y.n_series != 1:
            raise DataError("target CSV must hold exactly one column")
        inputs.append(args.target_csv)
        merged = Panel(np.vstack([panel.values, y.values]),
                       (panel.names or tuple(f"x{i}" for i in range(panel.n_series))) + ("__target__",))
        tname = "__target__"
        if y.names and y.names[0] in codes:
            codes = {**codes, tname: codes.pop(y.names[0])}
    else:
        if not panel.names or args.target not in panel.names:
            raise DataError(f"target column {args.target!r} not found in {args.panel}")
        merged, tname = panel, args.target
    merged, lost = forecast.transform_panel(merged, codes)
    k = merged.names.index(tname)
    y = merged.values[k]
    X = merged.values if args.target else np.delete(merged.values, k, axis=0)
    cfg = _config(args)
    rep = forecast.rolling_eval(y, Panel(X), spec, EstimationConfig(
        **{**asdict(cfg), "bandwidth_constant": spec.bandwidth_constant}))
    csv_path = str(args.out) + ".csv"
    forecast.save_report_json(rep, args.out)
    forecast.write_forecast_csv(rep, csv_path)
    print(f"windows={len(rep.origins)} skipped={len(rep.skipped)} mse={rep.mse:.6g} "
          f"relative_mse={rep.relative_mse:.6g}")
    config = {"spec": asdict(spec), "estimation": asdict(cfg), "tcodes": codes,
              "target": args.target or args.target_csv, "trimmed_periods": lost}
    return config, inputs, [args.out, csv_path]


COMMANDS = {
    "estimate": cmd_estimate,
    "select": cmd_select,
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "forecast": cmd_forecast,
}


def cmd_replay(args):
    man = _read_json(args.manifest, "manifest")
    try:
        argv = list(man["argv"])
        recorded = man["inputs"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"manifest {args.manifest} is missing {exc}") from exc
    for path, digest in recorded.items():
        if not Path(path).exists() or _sha256(path) != digest:
            raise DataError(f"input {path} is missing or differs from the recorded digest")
    if args.out is not None:
        i = argv.index("--out")
        argv[i + 1] = args.out
    return run(argv, environ={})


# ---------------------------------------------------------------- entry point

def run(argv=None, environ=None) -> int:
    environ = os.environ if environ is None else environ
    ap = build_parser()
    try:
        _apply_env(ap, environ)
        args = ap.parse_args(argv)
    except ConfigError as exc:
        print(f"modalfactor: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors exit with 2
        return int(exc.code or 0)
    if getattr(args, "verbose", False):
        logging.basicConfig(level=logging.DEBUG, format="%(message)s", stream=sys.stderr, force=True)
    try:
        if args.command == "replay":
            return cmd_replay(args)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        config, inputs, outputs = COMMANDS[args.command](args)
        _write_manifest(ap, args, config, inputs, outputs)
    except ConfigError as exc:
        print(f"modalfactor: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"modalfactor: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ModalFactorError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"modalfactor: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
