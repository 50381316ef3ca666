"""Command line entry point: ``projunn verify | train | bench``.

Exit codes: 0 success, 1 a failed step or check, 2 a configuration error.
``PROJUNN_THREADS`` caps the BLAS thread pool and the block-update workers.
"""
import argparse
import json
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import ConfigError, InvalidArgumentError, StepFailureError
from .numerics import worker_count

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG = 0, 1, 2


def _sizes(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must be comma-separated integers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="projunn", description="Low-rank unitary/orthogonal training toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the oracle and invariant checks, print JSON verdicts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="reduced trial counts")
    p.add_argument("--param-file", type=Path, help="also check that this saved parameter file loads")
    p.add_argument("--out", type=Path, help="write the JSON report here as well")

    p = sub.add_parser("train", help="train a model from a TOML config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, help="directory for trajectory.csv and summary.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("bench", help="time an update against problem size")
    p.add_argument("--op", required=True, choices=("update_d", "update_t", "polar_dense"))
    p.add_argument("--sizes", type=_sizes, default=[256, 512, 1024, 2048])
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--field", choices=("real", "complex"), default="real")
    p.add_argument("--out", type=Path, help="write the CSV here as well")
    return parser


def _verify(args):
    from .verify import verify, verify_json

    def progress(res):
        mark = "PASS" if res.passed else "FAIL"
        print(f"{mark} {res.name}: {res.value:.3g} (threshold {res.threshold:.3g}) {res.detail}", file=sys.stderr)

    report = verify(args.seed, "quick" if args.quick else "full", args.param_file, progress)
    text = verify_json(report)
    print(text)
    if args.out:
        args.out.write_text(text + "\n")
    return EXIT_OK if report["passed"] else EXIT_FAILURE


def _train(args):
    from .trainer import load_config, train

    config = load_config(args.config, seed=args.seed)

    def progress(epoch, loss):
        if not args.quiet:
            print(f"epoch {epoch}: test loss {loss:.5g}", file=sys.stderr)

    try:
        report = train(config, args.out, progress)
    except StepFailureError as exc:
        print(f"step failure: {exc}", file=sys.stderr)
        print(json.dumps(exc.diagnostics, indent=2), file=sys.stderr)
        return EXIT_FAILURE
    print(json.dumps(report.summary, indent=2))
    return EXIT_OK


def _bench(args):
    from .bench import bench, bench_csv

    rows = bench(args.op, args.sizes, args.k, args.reps, args.field)
    text = bench_csv(rows)
    print(text, end="")
    if args.out:
        args.out.write_text(text)
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    handlers = {"verify": _verify, "train": _train, "bench": _bench}
    try:
        with threadpool_limits(limits=worker_count()):
            return handlers[args.command](args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
