"""Command-line entry point: ``protoadapt <command> ...``.

Exit codes: 0 success, 1 failed check, 2 invalid config or arguments,
3 I/O problems, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path


EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(ValueError):
    pass


# ------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    from .synth import PROFILES, DomainSpec, generate_domain

    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.spec in PROFILES:
        spec = PROFILES[args.spec]
    else:
        try:
            raw = json.loads(Path(args.spec).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"spec is not valid JSON: {exc}") from exc
        try:
            spec = DomainSpec.from_dict(raw)
        except TypeError as exc:
            raise UsageError(f"invalid spec: {exc}") from exc
    path = generate_domain(spec, args.n, args.out, args.n_eval)
    print(path)
    return EXIT_OK


def cmd_run(args) -> int:
    from .config import ExperimentConfig
    from .harness import run_sequence

    cfg = ExperimentConfig.from_file(args.config)
    out = Path(args.out) if args.out else cfg.output_dir
    result = run_sequence(cfg, out)
    print(out)
    for mode in ("incremental", "agnostic"):
        s = result["summary"][mode]["mae"]
        print(f"{mode}: MAE forgetting {s['average_forgetting']:.4f}%  "
              f"average {s['average_performance']:.3f}  SPTO {s['spto']:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .harness import evaluate_run

    print(json.dumps(evaluate_run(args.run, args.mode), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_metrics(args) -> int:
    from .config import ConfigError
    from .harness import LOG_NAME, METRICS, MODES, REPORT_NAME, load_run
    from .metrics import summarize

    run = Path(args.run)
    _, _, _, _, logdata = load_run(run)
    chash = logdata["config_hash"]
    report = run / REPORT_NAME
    if report.exists():
        with report.open() as fh:
            hashes = {row["config_hash"] for row in csv.DictReader(fh)}
        if hashes != {chash}:
            raise ConfigError(f"{REPORT_NAME} hash {sorted(hashes)} differs from {LOG_NAME} hash {chash}")
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["mode", "metric", "average_forgetting_pct", "average_performance", "spto"])
    for mode in MODES:
        for m in METRICS:
            s = summarize(logdata["log"][mode][m])
            w.writerow([mode, m, f"{s['average_forgetting']:.6g}", f"{s['average_performance']:.6g}", f"{s['spto']:.6g}"])
    return EXIT_OK


def _parse_sizes(text: str) -> list[tuple[int, int]]:
    """``"1,1;10,5"`` or ``"1x1,10x5"`` -> [(1, 1), (10, 5)]."""
    out = []
    items = text.split(";") if ";" in text else text.split()
    if len(items) == 1 and "x" in text:
        items = text.split(",")
    for item in items:
        parts = item.replace("x", ",").split(",")
        try:
            a, b = (int(p) for p in parts)
        except ValueError as exc:
            raise UsageError(f"bad set-size pair {item!r}; use e.g. '1,1;10,5'") from exc
        if a < 1 or b < 1:
            raise UsageError("set sizes must be positive")
        out.append((a, b))
    return out


def cmd_sweep(args) -> int:
    from .config import ExperimentConfig
    from .harness import sweep

    if args.param != "set_sizes":
        raise UsageError(f"only 'set_sizes' can be swept, not {args.param!r}")
    cfg = ExperimentConfig.from_file(args.config)
    out = Path(args.out) if args.out else cfg.output_dir
    rows = sweep(cfg, _parse_sizes(args.values), out)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(seed=args.seed)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < args.tol else "FAIL"
        print(f"{name:28s} {err:.2e} {status}")
        worst = max(worst, err)
    return EXIT_OK if worst < args.tol else EXIT_FAIL


def cmd_export_descriptors(args) -> int:
    from .harness import export_descriptors

    print(export_descriptors(args.run, args.out))
    return EXIT_OK


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="protoadapt", description="Continual depth completion with prototype sets.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic dataset to disk")
    g.add_argument("--spec", required=True, help="DomainSpec JSON file, or a built-in profile name (indoor-like, outdoor-like)")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--n", type=int, required=True, help="number of training samples")
    g.add_argument("--n-eval", type=int, default=None, help="held-out samples (default: n // 5, at least 1)")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", help="run the full continual sequence from a config")
    r.add_argument("--config", required=True, help="experiment config JSON")
    r.add_argument("--out", default=None, help="override the output directory")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="re-evaluate a finished run in one mode")
    e.add_argument("--run", required=True, help="run directory")
    e.add_argument("--mode", choices=["incremental", "agnostic"], required=True, help="evaluation mode")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("metrics", help="print forgetting / average performance / SPTO as CSV")
    m.add_argument("--run", required=True, help="run directory")
    m.set_defaults(func=cmd_metrics)

    s = sub.add_parser("sweep", help="repeat a run over a set-size grid with one shared backbone")
    s.add_argument("--config", required=True, help="experiment config JSON")
    s.add_argument("--param", default="set_sizes", help="parameter to sweep (only set_sizes)")
    s.add_argument("--values", required=True, help="set-size pairs, e.g. '1,1;10,5'")
    s.add_argument("--out", default=None, help="override the output directory")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op and loss")
    c.add_argument("--tol", type=float, default=5e-3, help="relative error threshold")
    c.add_argument("--seed", type=int, default=0, help="seed for the random inputs")
    c.set_defaults(func=cmd_gradcheck)

    x = sub.add_parser("export-descriptors", help="write a run's domain descriptors to CSV")
    x.add_argument("--run", required=True, help="run directory")
    x.add_argument("--out", required=True, help="output CSV path")
    x.set_defaults(func=cmd_export_descriptors)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .pdt import FormatError
    from .tensor import NumericError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, FormatError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
