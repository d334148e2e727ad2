"""Command line: ``thinfilm simulate | ensemble | verify | plot``.

Exit codes: 0 ok, 1 check failure, 2 usage or configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, config_from_dict, initial_field, load_config
from .errors import ConfigError, NumericalFailure
from .torus import write_field

log = logging.getLogger("thinfilm")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _environment() -> dict:
    return {
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "fft_backend": f"scipy.fft {scipy.__version__}",
        "platform": platform.platform(),
    }


def _load(path: str, seed_override: int | None) -> RunConfig:
    """Read a TOML config, or the config echo inside a run manifest (``.json``)."""
    p = Path(path)
    if p.suffix == ".json":
        try:
            data = json.loads(p.read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot read manifest: {err}") from None
        if "config" not in data:
            raise ConfigError("manifest has no config echo", key="config")
        cfg = config_from_dict(data["config"], base_dir=str(p.parent))
    else:
        cfg = load_config(p)
    return cfg.with_seed(seed_override) if seed_override is not None else cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args) -> int:
    from .splitting import run_trajectory

    cfg = _load(args.config, args.seed_override)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    u0 = initial_field(cfg)
    t0 = time.perf_counter()
    try:
        rec = run_trajectory(u0, replace(cfg.splitting, keep_boundary_fields=True))
    except NumericalFailure as err:
        print(f"thinfilm: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    wall = time.perf_counter() - t0
    files = {"observables": "observables.csv", "initial_field": "u0.field", "final_field": "uT.field"}
    rec.write_csv(out / files["observables"])
    write_field(out / files["initial_field"], u0)
    write_field(out / files["final_field"], rec.boundary_fields[-1][2])
    if rec.snapshots:
        (out / "snapshots").mkdir(exist_ok=True)
        snaps = []
        for i, (t, u) in enumerate(rec.snapshots):
            name = f"snapshots/snap_{i:05d}.field"
            write_field(out / name, u)
            snaps.append({"t": t, "file": name})
        files["snapshots"] = snaps
    manifest = {
        "command": "simulate",
        "config": cfg.echo(),
        "seed": cfg.seed,
        "trajectory": cfg.splitting.trajectory,
        "files": files,
        "noise": rec.noise_manifest,
        "timings": {"wall_s": wall, **rec.timings},
        "audit": {
            "det_clipped_mass": float(sum(rec.macro["det_clipped_mass"])),
            "stoch_clipped_mass": float(sum(rec.macro["stoch_clipped_mass"])),
            "stoch_exceedances": int(sum(rec.macro["stoch_exceedances"])),
            "det_energy_violations": int(sum(rec.macro["det_energy_violations"])),
        },
        **_environment(),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {out / files['observables']} ({len(rec.times)} rows, {wall:.2f}s)")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    from .ensemble import run_ensemble, worker_cap, write_ensemble

    if args.count < 1:
        print("thinfilm: --count must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    cfg = _load(args.config, args.seed_override)
    initial_field(cfg)  # surface init errors before spawning workers
    out = Path(args.out)
    t0 = time.perf_counter()
    result = run_ensemble(cfg, args.count, args.workers)
    wall = time.perf_counter() - t0
    index = write_ensemble(result, out)
    for k, msg in sorted(result.failures.items()):
        log.warning("trajectory %d failed: %s", k, msg)
    manifest = {
        "command": "ensemble",
        "config": cfg.echo(),
        "seed": cfg.seed,
        "count": args.count,
        "workers": worker_cap(args.workers),
        "files": {"trajectories": index, "summary": "summary.csv", "summary_sup": "summary_sup.csv",
                  "moments": "moments.json"},
        "excluded": sorted(result.failures),
        "timings": {"wall_s": wall},
        **_environment(),
    }
    _write_json(out / "manifest.json", manifest)
    ok = len(result.records)
    print(f"{ok}/{args.count} trajectories succeeded; summary in {out / 'summary.csv'}")
    return EXIT_OK if result.ok else EXIT_NUMERIC


def cmd_verify(args) -> int:
    from .verify import run_suite

    results = run_suite(args.suite, fault=args.fault)
    report = [r.to_dict() for r in results]
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    failed = [r.check_name for r in results if not r.passed]
    if failed:
        print("failed checks: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import SchemaError, plot_field, plot_observables, plot_support

    out = Path(args.out)
    try:
        if args.kind == "heatmap":
            paths = [plot_field(args.path, out)]
        elif args.kind == "support":
            path, frac = plot_support(args.path, out, args.threshold)
            paths = [path]
            print(f"wet fraction {frac:.4f}")
        else:
            cols = None if args.kind == "all" else [c.strip() for c in args.kind.split(",")]
            paths = plot_observables(args.path, cols, out)
    except SchemaError as err:
        print(f"thinfilm: schema mismatch: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"thinfilm: {err}", file=sys.stderr)
        return EXIT_USAGE
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thinfilm", description="Stochastic thin-film splitting simulator.")
    parser.add_argument("--version", action="version", version=f"thinfilm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one trajectory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="run")
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", help="run independent trajectories and summarize")
    p.add_argument("--config", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="ensemble")
    p.add_argument("--seed-override", type=int, default=None)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("verify", help="run the invariant checks and print a JSON report")
    p.add_argument("--suite", choices=("fast", "full"), default="fast")
    p.add_argument("--out", default=None, help="also write the report here")
    p.add_argument("--fault", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render PNGs from an observables CSV or a field file")
    p.add_argument("path")
    p.add_argument("--kind", default="all",
                   help="'all', comma-separated column names, 'heatmap' or 'support' (field files)")
    p.add_argument("--out", default="plots")
    p.add_argument("--threshold", type=float, default=1e-7, help="support mask threshold")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if getattr(args, "fault", None) is not None:
        from .verify import FAULTS

        if args.fault not in FAULTS:
            print(f"thinfilm: unknown fault {args.fault!r}", file=sys.stderr)
            return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"thinfilm: config error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
