"""Command-line front end.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 criterion failed
(``certify --fail-on-criterion`` only).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import rng as rngs
from .ace import CumulativeRobustnessCurve, log_t_grid, pac_sample_size, run_certification
from .bench import run_bench
from .config import load_config
from .distribution import PerturbationBall, load_generator, sample_nominal
from .errors import AcecertError, ConfigError
from .local_risk import amls
from .mining import collect, run_amls_batch, write_records
from .model import load_model, margin_function

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CRITERION = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _t_list(text: str) -> list:
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty t list")
    for t in values:
        if not 0.0 < t <= 1.0:
            raise argparse.ArgumentTypeError(f"t must lie in (0, 1], got {t}")
    return values


def _unit_interval(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {v}")
    return v


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Collects artifacts for one command and writes the manifest last."""

    def __init__(self, command: str, args, seed=None):
        self.command = command
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config = getattr(args, "config", None)
        self.seed = seed
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()
        self.files = []

    def write(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.files.append(path)
        return path

    def finish(self, **extra) -> Path:
        manifest = {
            "command": self.command,
            "config": None if self.config is None else str(self.config),
            "seed": self.seed,
            "out": str(self.out),
            "started": self.started.isoformat(),
            "finished": datetime.now(timezone.utc).isoformat(),
            "runtime_s": time.perf_counter() - self.t0,
            "version": __version__,
            "artifacts": {p.name: _sha256(p) for p in self.files},
        }
        manifest.update(extra)
        path = self.out / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        return path


def _load(args):
    run_cfg = load_config(args.config).with_overrides(seed=args.seed, workers=args.workers, t_values=args.t)
    return run_cfg, load_model(run_cfg.model_path), load_generator(run_cfg.generator_path)


def cmd_certify(args) -> int:
    cfg, model, gen = _load(args)
    cert = cfg.certification
    run = Run("certify", args, cert.seed)
    report = run_certification(model, gen, cert)
    run.write("report.json", json.dumps(report.to_dict(), indent=2) + "\n")
    run.write("curve.csv", report.curve.to_csv())
    run.write("curve_grid.csv", report.curve.grid_csv())
    run.write("samples.csv", report.samples_csv())
    run.finish(pipeline_runtime_s=report.runtime_s)
    for c in report.criterion_results:
        verdict = "satisfied" if c["satisfied"] else "NOT satisfied"
        print(f"t={c['t']:g}  R(t)={c['R_t']:.6f}  risk={c['thresholded_risk']:.6f}  R*={report.r_star:.6f}  rho={c['rho']:g}  {verdict}")
    if args.fail_on_criterion and not report.all_passed:
        return EXIT_CRITERION
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg, model, gen = _load(args)
    bench = cfg.bench
    run = Run("bench", args, bench.ace.seed)
    result = run_bench(model, gen, bench, progress=lambda rep: print(f"repetition {rep + 1}/{bench.repetitions}", file=sys.stderr))
    table = result.table_csv()
    run.write("bench.csv", table)
    lines = ["method,repetition,N,N0,forward_passes,runtime_s," + ",".join(f"R_t={t:g}" for t in bench.t_values)]
    for r in result.runs:
        vals = ["" if r.values[t] is None else repr(r.values[t]) for t in bench.t_values]
        lines.append(",".join([r.method, str(r.repetition), str(r.N), "" if r.N0 is None else str(r.N0), str(r.forward_passes), f"{r.runtime_s:.3f}"] + vals))
    run.write("bench_runs.csv", "\n".join(lines) + "\n")
    run.finish()
    print(table, end="")
    return EXIT_OK


def cmd_mine(args) -> int:
    cfg, model, gen = _load(args)
    cert = cfg.certification
    run = Run("mine", args, cert.seed)
    # the calibration-subset nominals and AMLS streams of `certify`
    nominals = sample_nominal(gen, count=cert.N0, seed=cert.seed).nominals
    results = run_amls_batch(
        model, gen, nominals, cert.radius, cert.metric, cert.amls, cert.seed, cert.clip_lo, cert.clip_hi
    )
    records = collect(
        model, gen, nominals, results, cert.metric, cert.radius,
        per_nominal=cfg.mine.per_nominal, merge_radius=cfg.mine.merge_radius, extremes_only=cfg.mine.extremes_only,
    )
    path = run.out / "counterexamples.jsonl"
    n = write_records(records, path)
    run.files.append(path)
    run.finish(records=n)
    if n == 0:
        print("no counterexamples found; wrote an empty archive", file=sys.stderr)
    else:
        print(f"wrote {n} counterexamples from {len({r.nominal_index for r in records})} nominals to {path}")
    return EXIT_OK


def cmd_curve(args) -> int:
    curve = CumulativeRobustnessCurve.read_csv(args.curve)
    ts = args.t if args.t else [1e-15, 1e-10, 1e-5, 1e-2, 1.0]
    print("t,R_t")
    for t in ts:
        print(f"{t!r},{curve.evaluate(t)!r}")
    if args.grid:
        Path(args.grid).write_text(curve.grid_csv(log_t_grid()))
    return EXIT_OK


def cmd_amls(args) -> int:
    cfg, model, gen = _load(args)
    cert = cfg.certification
    count = args.count if args.count is not None else cert.N0
    batch = sample_nominal(gen, count=count, seed=cert.seed)
    run = Run("amls", args, cert.seed)
    rows = ["index,log_risk,terminated,levels,forward_passes,counterexamples"]
    diag = []
    for i, x in enumerate(batch.nominals):
        h = margin_function(model, x, cert.metric, gen.oracle)
        ball = PerturbationBall(x, cert.radius, clip_lo=cert.clip_lo, clip_hi=cert.clip_hi)
        res = amls(h, ball, cert.amls, rngs.stream(cert.seed, rngs.AMLS, i, 0))
        rows.append(
            f"{i},{res.log_risk!r},{res.terminated.value},{len(res.levels)},{res.forward_passes},{len(res.counterexamples)}"
        )
        for row in res.diagnostics():
            diag.append(json.dumps({"index": i, **row}))
        print(f"nominal {i}: log p = {res.log_risk:.4f} ({res.terminated.value}, {len(res.levels)} levels)")
    run.write("amls.csv", "\n".join(rows) + "\n")
    run.write("amls_diagnostics.jsonl", "\n".join(diag) + ("\n" if diag else ""))
    run.finish()
    return EXIT_OK


def cmd_pac_size(args) -> int:
    print(pac_sample_size(args.epsilon, args.delta))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="acecert", description="Statistical global robustness certification of classifiers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_flags(sp, with_criterion=False):
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--seed", type=_seed, help="override the master seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads")
        sp.add_argument("--t", type=_t_list, help="comma-separated thresholds t in (0, 1]")
        if with_criterion:
            sp.add_argument("--fail-on-criterion", action="store_true", help="exit 3 if any criterion fails")

    run_flags(sub.add_parser("certify", help="run the certification pipeline"), with_criterion=True)
    run_flags(sub.add_parser("bench", help="equal-budget comparison of naive MC, AMLS and ACE"))
    run_flags(sub.add_parser("mine", help="mine counterexamples from AMLS particles"))
    sp = sub.add_parser("amls", help="standalone AMLS on nominals from the configured generator")
    run_flags(sp)
    sp.add_argument("--count", type=int, help="number of nominals (default: N0)")

    sp = sub.add_parser("curve", help="evaluate a stored robustness curve")
    sp.add_argument("curve", help="curve CSV written by certify")
    sp.add_argument("--t", type=_t_list, help="comma-separated thresholds t in (0, 1]")
    sp.add_argument("--grid", help="also write a log-spaced t,R_t grid CSV here")

    sp = sub.add_parser("pac-size", help="Hoeffding sample size for (epsilon, delta)")
    sp.add_argument("epsilon", type=_unit_interval)
    sp.add_argument("delta", type=_unit_interval)
    return p


COMMANDS = {
    "certify": cmd_certify,
    "bench": cmd_bench,
    "mine": cmd_mine,
    "curve": cmd_curve,
    "amls": cmd_amls,
    "pac-size": cmd_pac_size,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) is not None and getattr(args, "workers", 1) < 1:
        print("acecert: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"acecert: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AcecertError as exc:
        print(f"acecert: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"acecert: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
