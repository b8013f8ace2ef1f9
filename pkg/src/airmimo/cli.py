"""Command line entry point: ``airmimo {simulate,sweep,gen-channels,selftest}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from airmimo.config import ScenarioConfig, load_yaml, parse_sweep, validate
from airmimo.errors import AirMimoError, ConfigError, NumericError
from airmimo.harness import export_channels, run_point, run_sweep, sweep_meta
from airmimo.io import emit_results

log = logging.getLogger("airmimo")

# flag -> config key
_OVERRIDES = {
    "K": "K",
    "n_y": "n_y",
    "n_z": "n_z",
    "N_c": "N_c",
    "Q": "Q",
    "P_t": "P_t",
    "snr_db": "snr_db",
    "target_nmse": "target_nmse",
    "pilot_length": "pilot_length",
    "seed": "seed",
    "trials": "trials",
    "iterations": "iterations",
    "symbols": "symbols",
}


def _scenario_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML/JSON scenario file")
    g = p.add_argument_group("scenario overrides (take precedence over the config file)")
    g.add_argument("--K", type=int, dest="K")
    g.add_argument("--n-y", type=int, dest="n_y")
    g.add_argument("--n-z", type=int, dest="n_z")
    g.add_argument("--N-c", type=int, dest="N_c")
    g.add_argument("--Q", type=int, dest="Q")
    g.add_argument("--P-t", type=float, dest="P_t")
    g.add_argument("--snr-db", type=float)
    g.add_argument("--target-nmse", type=float)
    g.add_argument("--pilot-length", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--trials", type=int)
    g.add_argument("--iterations", type=int)
    g.add_argument("--symbols", choices=("unit-gaussian", "qpsk"))
    g.add_argument("--schemes", help="comma-separated subset of rzf,wmmse_naive,wmmse_robust")


def _output_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, help="result file (default: print CSV to stdout)")
    p.add_argument("--format", choices=("csv", "json"), help="defaults to the --out extension, else csv")
    p.add_argument("--workers", type=int, default=1)


def _scenario(args) -> ScenarioConfig:
    overrides = {key: getattr(args, flag) for flag, key in _OVERRIDES.items()}
    if args.schemes:
        overrides["schemes"] = [s.strip() for s in args.schemes.split(",") if s.strip()]
    overrides = {k: v for k, v in overrides.items() if v is not None}
    data = load_yaml(args.config) if args.config else {}
    data.pop("sweep", None)
    # target_nmse and pilot_length are alternatives: a flag for one replaces the file's other
    if "target_nmse" in overrides:
        data.pop("pilot_length", None)
    if "pilot_length" in overrides:
        data.pop("target_nmse", None)
    return validate(data | overrides)


def _write(rows, args, meta) -> None:
    fmt = args.format or (args.out.suffix.lstrip(".") if args.out and args.out.suffix in (".csv", ".json") else "csv")
    if args.out is None:
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / f"rows.{fmt}"
            emit_results(rows, path, fmt, meta)
            sys.stdout.write(path.read_text())
        return
    emit_results(rows, args.out, fmt, meta)
    log.info("wrote %d rows to %s", len(rows), args.out)


def _summary(rows) -> None:
    groups = {}
    for r in rows:
        groups.setdefault((r.axis_value, r.scheme), []).append(r.sum_rate_bps_hz)
    for (value, scheme), rates in groups.items():
        print(f"{rows[0].axis}={value:g}  {scheme:<13s} mean sum rate {np.mean(rates):8.4f} bits/s/Hz "
              f"over {len(rates)} trials", file=sys.stderr)


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    rows = run_point(cfg, workers=args.workers)
    _summary(rows)
    _write(rows, args, sweep_meta(cfg))
    return 0


def cmd_sweep(args) -> int:
    cfg = _scenario(args)
    spec = load_yaml(args.config).get("sweep", {}) if args.config else {}
    if not isinstance(spec, dict):
        raise ConfigError("'sweep' section must be a mapping")
    spec = dict(spec)
    if args.axis:
        spec["axis"] = args.axis
    if args.values:
        try:
            spec["values"] = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if args.reps is not None:
        spec["repetitions"] = args.reps
    spec.setdefault("repetitions", cfg.trials)
    sweep = parse_sweep(spec)
    rows = run_sweep(cfg, sweep, workers=args.workers)
    _summary(rows)
    _write(rows, args, sweep_meta(cfg, sweep))
    return 0


def cmd_gen_channels(args) -> int:
    cfg = _scenario(args)
    size = export_channels(cfg, args.count, args.out)
    print(f"wrote {args.count} channel tensors ({cfg.K}x{cfg.N_c}x{cfg.N_t}) to {args.out}: {size} bytes")
    return 0


def cmd_selftest(args) -> int:
    from airmimo.acceptance import run_all

    numbers = [int(x) for x in args.only.split(",")] if args.only else None
    results = run_all(numbers)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="airmimo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run trials of every scheme at one operating point")
    _scenario_args(p)
    _output_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep one scenario parameter")
    _scenario_args(p)
    _output_args(p)
    p.add_argument("--axis", choices=("snr_db", "target_nmse", "K", "Q"))
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--reps", type=int, help="repetitions per point (default: config trials)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-channels", help="export true channel tensors to a binary dataset")
    _scenario_args(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_channels)

    p = sub.add_parser("selftest", help="run the acceptance criteria")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except AirMimoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, ArithmeticError) as exc:
        # validation failures raised by library constructors
        code = NumericError.exit_code if isinstance(exc, ArithmeticError) else ConfigError.exit_code
        print(f"error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
