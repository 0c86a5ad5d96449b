"""Command-line frontend: simulate, trace, sweep, fit and replay.

Exit codes: 0 success, 1 malformed input or usage error, 2 physically
rejected parameter point. Every command writes ``manifest.json`` next to
its outputs; ``qdetector replay manifest.json`` re-runs it.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__, dynamics, sweep
from .errors import EfficiencyTooSmall, RegimeError, SpectralError
from .liouville import assemble_liouvillian, spectral_decompose, write_dump
from .metrics import analyse, check_engine_regime, initial_state
from .model import PARAM_KEYS, DetectorParams, load_params

EXIT_OK, EXIT_USAGE, EXIT_REJECTED = 0, 1, 2
JITTER_COLUMNS = {"rms": "jitter_rms", "variance": "jitter"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- argument groups -------------------------------------------------------


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="parameter file (key = value per line)")
    g = p.add_argument_group("parameter overrides")
    for key in PARAM_KEYS:
        g.add_argument(f"--{key}", dest=f"param_{key}", metavar="X", help=f"override {key}")


def _add_out(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qdetector", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="figures of merit for one parameter point")
    _add_param_flags(p)
    _add_out(p)
    p.add_argument("--dump", type=Path, help="also write the Liouvillian and spectrum here")

    p = sub.add_parser("trace", help="transient currents after one detection event")
    _add_param_flags(p)
    _add_out(p)
    p.add_argument("--t-max-mult", type=float, default=30.0, help="trace span in dead times (default 30)")
    p.add_argument("--grid", type=int, default=400, help="number of grid points (default 400)")

    p = sub.add_parser("sweep", help="sample a parameter region and write records")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="JSON sweep configuration")
    src.add_argument("--preset", choices=sweep.PRESETS)
    p.add_argument("--N", type=int, help="number of samples")
    p.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    p.add_argument("--jobs", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--jitter-convention", choices=sorted(JITTER_COLUMNS), default="rms")
    _add_out(p)

    p = sub.add_parser("fit", help="fit y = a/x or y = a x + b to a records file")
    p.add_argument("records", type=Path)
    p.add_argument("--model", choices=sorted(sweep.FITTERS), default="inverse")
    p.add_argument("--x", required=True, help="x column (inv_gap = -1/Re(lambda1))")
    p.add_argument("--y", required=True, help="y column")
    p.add_argument("--filter", action="append", default=[], help="e.g. '0.72<eta_D<0.7358' (repeatable)")
    p.add_argument(
        "--jitter-convention",
        choices=sorted(JITTER_COLUMNS),
        default="rms",
        help="column used when --x/--y is 'jitter' (default rms)",
    )
    _add_out(p)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="output directory (default: the manifest's)")
    return parser


# --- commands ----------------------------------------------------------------


def _params_from(args) -> DetectorParams:
    overrides = {
        k: getattr(args, f"param_{k}") for k in PARAM_KEYS if getattr(args, f"param_{k}", None) is not None
    }
    try:
        return load_params(args.config, overrides)
    except FileNotFoundError as exc:
        raise UsageError(f"cannot read parameter file: {exc.filename}") from None
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _params_resolved(params: DetectorParams) -> dict:
    return params.as_dict()


def _spectral_point(params: DetectorParams, allow_degenerate: bool = False):
    check_engine_regime(params)
    liouv = assemble_liouvillian(params)
    return liouv, spectral_decompose(liouv, allow_degenerate=allow_degenerate)


def cmd_simulate(params: DetectorParams, out: Path, dump: Path | None = None) -> dict:
    liouv, spectral = _spectral_point(params)
    report = analyse(liouv, spectral)
    status = "ok"
    if report.invariant_violations():
        status = "rejected:invariant-violation"
    path = out / "report.csv"
    sweep.write_records(path, [sweep.SweepRecord(0, params, report, status)])
    outputs = [str(path)]
    if dump is not None:
        write_dump(dump, liouv, spectral)
        outputs.append(str(dump))
    if status != "ok":
        raise RegimeError("invariant-violation", "; ".join(report.invariant_violations()))
    return {"outputs": outputs}


def cmd_trace(params: DetectorParams, out: Path, t_max_mult: float = 30.0, grid: int = 400) -> dict:
    if not t_max_mult > 0:
        raise UsageError("--t-max-mult must be > 0")
    if grid < 8:
        raise UsageError("--grid must be >= 8")
    try:
        liouv, spectral = _spectral_point(params)
    except SpectralError as exc:
        if exc.reason != "degenerate-steady-state":
            raise
        # a decoupled target leaves the initial state stationary; the
        # propagator stays exact with a multi-dimensional kernel
        liouv, spectral = _spectral_point(params, allow_degenerate=True)
    rho0 = initial_state(spectral)
    t = dynamics.trace_grid(spectral, n=grid, t_max_mult=t_max_mult)
    trace = dynamics.transient_current(spectral, rho0, t)
    path = out / "trace.csv"
    dynamics.write_trace(path, trace)
    return {"outputs": [str(path)]}


def cmd_sweep(config: sweep.SweepConfig, out: Path, jobs: int | None = None, jitter: str = "rms") -> dict:
    records = sweep.run_sweep(config, jobs=jobs)
    rec_path, sum_path = out / "records.csv", out / "summary.txt"
    sweep.write_records(rec_path, records)
    sweep.write_summary(sum_path, sweep.summarize(config, records, JITTER_COLUMNS[jitter]))
    return {"outputs": [str(rec_path), str(sum_path)]}


def cmd_fit(records: Path, model: str, x: str, y: str, filters, out: Path, jitter: str = "rms") -> dict:
    try:
        rows = sweep.read_records(records)
        fs = [sweep.parse_filter(f) for f in filters]
    except FileNotFoundError:
        raise UsageError(f"records file not found: {records}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    x, y = (JITTER_COLUMNS[jitter] if c == "jitter" else c for c in (x, y))
    if rows:
        known = set(rows[0]) | {"inv_gap"}
        for c in [x, y, *(f.column for f in fs)]:
            if c not in known:
                raise UsageError(f"unknown column: {c}")
    sel = sweep.select(rows, fs)
    if len(sel) < 3:
        raise UsageError(f"only {len(sel)} ok rows survive the filters; need >= 3")
    xs, ys = sweep.xy(sel, x, y)
    try:
        fit = sweep.FITTERS[model](xs, ys, filter=" & ".join(f.text for f in fs), x_column=x, y_column=y)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = out / "fit.txt"
    sweep.write_summary(path, fit.as_dict())
    return {"outputs": [str(path)]}


# --- manifest ------------------------------------------------------------------


def _resolve(args) -> tuple[str, dict]:
    """Materialise every input of a command into a JSON-able dict."""
    cmd = args.command
    if cmd in ("simulate", "trace"):
        cfg = {"params": _params_resolved(_params_from(args))}
        if cmd == "simulate":
            cfg["dump"] = None if args.dump is None else str(args.dump)
        else:
            cfg.update(t_max_mult=args.t_max_mult, grid=args.grid)
        return cmd, cfg
    if cmd == "sweep":
        try:
            config = sweep.load_sweep_config(args.config) if args.config else sweep.preset(args.preset)
            changes = {k: v for k, v in (("N", args.N), ("seed", args.seed)) if v is not None}
            if changes:
                config = config.replace(**changes)
        except FileNotFoundError as exc:
            raise UsageError(f"cannot read sweep config: {exc.filename}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad sweep config: {exc}") from None
        if not 0 <= config.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if args.jobs is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        return cmd, {"sweep": config.as_dict(), "jobs": args.jobs, "jitter_convention": args.jitter_convention}
    if cmd == "fit":
        return cmd, {
            "records": str(args.records),
            "model": args.model,
            "x": args.x,
            "y": args.y,
            "filters": list(args.filter),
            "jitter_convention": args.jitter_convention,
        }
    raise UsageError(f"cannot resolve command {cmd!r}")


def execute(cmd: str, cfg: dict, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    if cmd == "simulate":
        params = DetectorParams(**cfg["params"])
        dump = None if cfg.get("dump") is None else Path(cfg["dump"])
        return cmd_simulate(params, out, dump)
    if cmd == "trace":
        return cmd_trace(DetectorParams(**cfg["params"]), out, cfg["t_max_mult"], cfg["grid"])
    if cmd == "sweep":
        config = sweep.SweepConfig.from_dict(cfg["sweep"])
        return cmd_sweep(config, out, cfg.get("jobs"), cfg.get("jitter_convention", "rms"))
    if cmd == "fit":
        return cmd_fit(
            Path(cfg["records"]),
            cfg["model"],
            cfg["x"],
            cfg["y"],
            cfg["filters"],
            out,
            cfg.get("jitter_convention", "rms"),
        )
    raise UsageError(f"unknown command {cmd!r} in manifest")


def write_manifest(out: Path, cmd: str, cfg: dict, outputs: list[str], seconds: float) -> Path:
    seed = cfg["sweep"]["seed"] if cmd == "sweep" else None
    manifest = {
        "command": cmd,
        "config": cfg,
        "seed": seed,
        "version": __version__,
        "outputs": outputs,
        "out_dir": str(out),
        "wall_seconds": round(seconds, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path: Path) -> dict:
    try:
        m = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    for key in ("command", "config"):
        if key not in m:
            raise UsageError(f"{path}: manifest lacks {key!r}")
    return m


def _run(args) -> int:
    if args.command == "replay":
        m = read_manifest(args.manifest)
        cmd, cfg = m["command"], m["config"]
        out = args.out if args.out is not None else Path(m.get("out_dir", "."))
    else:
        cmd, cfg = _resolve(args)
        out = args.out
    start = time.perf_counter()
    try:
        result = execute(cmd, cfg, out)
    except (RegimeError, SpectralError, EfficiencyTooSmall) as exc:
        print(f"rejected: {exc.reason}: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    write_manifest(out, cmd, cfg, result["outputs"], time.perf_counter() - start)
    for path in result["outputs"]:
        print(path)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except UsageError as exc:
        print(f"qdetector {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
