"""``longdoc`` command-line driver.

Exit status: 0 on success, 1 when a verification suite fails, 2 on invalid
arguments or unreadable inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import bench
from .documents import read_corpus, read_predictions, write_corpus, write_predictions
from .pipeline import ExperimentConfig, Tagger, run_experiment
from .synthetic import SyntheticConfig, generate_synthetic
from .training import evaluate_f1, format_report

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def cmd_bench(args) -> int:
    records = bench.run_scaling_bench(
        args.mechanisms, args.lengths, args.dim, args.k, args.reps, args.bias, args.memory_budget, args.seed
    )
    bench.write_csv(records, sys.stdout if args.out == "-" else args.out)
    for r in records:
        if r.skipped:
            print(f"skipped {r.mechanism} N={r.N}: {r.skipped}", file=sys.stderr)
    try:
        for key, slope in bench.fit_complexity_slope(records).items():
            print(f"slope {key}: {slope:.3f}", file=sys.stderr)
    except ValueError as exc:
        print(f"no slope fit: {exc}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = bench.run_equivalence_suite(seed=args.seed) + bench.run_gradient_suite(seed=args.seed)
    for c in results:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}")
    passed, failed = bench.summarize(results)
    print(f"{passed} passed, {failed} failed")
    return EXIT_FAILED if failed else EXIT_OK


def cmd_gen(args) -> int:
    if len(args.length_mix) != 3:
        raise UsageError("--length-mix needs three fractions: short,medium,long")
    cfg = SyntheticConfig(seed=args.seed, count=args.count, length_mix=tuple(args.length_mix), id_prefix=args.prefix)
    write_corpus(generate_synthetic(cfg), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    _, records, report = run_experiment(cfg)
    if records:
        print(json.dumps(records[-1]))
    if report is not None:
        print(format_report(report))
    return EXIT_OK


def cmd_tag(args) -> int:
    tagger = Tagger.load(args.model)
    write_predictions(tagger.predict_corpus(read_corpus(args.input)), args.out)
    return EXIT_OK


def cmd_score(args) -> int:
    gold_docs = read_corpus(args.gold)
    report = evaluate_f1(read_predictions(args.pred), {d.id: d.spans for d in gold_docs}, {d.id: d.n_words for d in gold_docs})
    print(json.dumps(report, indent=2) if args.json else format_report(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="longdoc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="time and measure attention mechanisms over sequence lengths")
    p.add_argument("--mechanisms", type=_name_list, default=list(bench.MECHANISMS))
    p.add_argument("--lengths", type=_int_list, default=list(bench.DEFAULT_LENGTHS))
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--k", type=int, default=128)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--bias", default="none", choices=("none", "cosine1d", "squircle", "cross"))
    p.add_argument("--memory-budget", type=int, default=bench.DEFAULT_MEMORY_BUDGET, help="bytes allowed for the N x N buffer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the equivalence and gradient suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--length-mix", type=_float_list, default=[0.55, 0.40, 0.05])
    p.add_argument("--prefix", default="doc")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a tagger from a JSON experiment config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tag", help="predict spans for a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tag)

    p = sub.add_parser("score", help="span F1 of predictions against gold, by length category")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_score)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"longdoc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
