"""``tradertalk`` command line: run, analyze, report, compile-script."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .analysis import ClassifierRules
from .batch import analyze_transcripts, make_backend, run_batch, summarise
from .llm import ConfigError
from .orchestrator import compile_batch_script
from .scenario import load_scenario

EXIT_OK, EXIT_FAILED, EXIT_ERRORED_RUNS = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tradertalk", description="Simulate bilateral gilt trading between LLM market makers.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a batch of simulations")
    run.add_argument("--scenario", required=True, help="rq1, rq2, or a scenario JSON file")
    run.add_argument("--n", type=int, default=300)
    run.add_argument("--backend", default="live", help="live | scripted:<script-file> | replay:<exchange-log>")
    run.add_argument("--concurrency", type=int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", required=True, help="batch output directory")

    analyze = sub.add_parser("analyze", help="re-classify stored transcripts")
    analyze.add_argument("--transcripts", required=True)
    analyze.add_argument("--rules", default=None, help="classifier rules JSON (default: bundled rules)")
    analyze.add_argument("--out", required=True)
    analyze.add_argument("--scenario", default=None, help="defaults to scenario.json beside the transcripts")
    analyze.add_argument("--judge", default=None, help="classify with an LLM judge on this backend instead")

    report = sub.add_parser("report", help="print the summary of a batch directory")
    report.add_argument("--in", dest="in_dir", required=True)

    compile_ = sub.add_parser("compile-script", help="turn planned dialogues into a scripted-backend file")
    compile_.add_argument("--scenario", required=True)
    compile_.add_argument("--dialogues", required=True, help="JSON list of dialogues, each a list of utterances")
    compile_.add_argument("--out", required=True)
    return parser


def _run(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if args.concurrency is not None and args.concurrency < 1:
        raise ConfigError("--concurrency must be >= 1")
    backend = make_backend(args.backend, seed=args.seed)
    try:
        manifest, _ = run_batch(config, args.n, backend, args.out, concurrency=args.concurrency, seed=args.seed)
    finally:
        close = getattr(backend, "close", None)
        if close:
            close()
    print(summarise(args.out))
    return manifest.exit_status


def _analyze(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else None
    try:
        rules = ClassifierRules.load(args.rules) if args.rules else None
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load rules {args.rules}: {exc}") from exc
    judge = make_backend(args.judge) if args.judge else None
    metrics = analyze_transcripts(args.transcripts, args.out, scenario=scenario, rules=rules, judge=judge)
    print(summarise(args.out))
    return EXIT_OK if metrics.n_errored == 0 else EXIT_ERRORED_RUNS


def _report(args: argparse.Namespace) -> int:
    if not (Path(args.in_dir) / "metrics.json").exists():
        raise ConfigError(f"{args.in_dir} has no metrics.json")
    print(summarise(args.in_dir))
    return EXIT_OK


def _compile(args: argparse.Namespace) -> int:
    config = load_scenario(args.scenario)
    dialogues = json.loads(Path(args.dialogues).read_text(encoding="utf-8"))
    try:
        script = compile_batch_script(config, dialogues)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    Path(args.out).write_text(json.dumps(script, indent=1) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": _run, "analyze": _analyze, "report": _report, "compile-script": _compile}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except OSError as exc:  # includes PersistenceError
        print(f"i/o error: {exc}", file=sys.stderr)
    return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
