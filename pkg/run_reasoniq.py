"""
ReasonIQ - Command Line
Training, grading, curation, behavior analysis and reporting.

Usage: python run_reasoniq.py <command> [options]
Exit codes: 0 ok, 1 usage or configuration error, 2 runtime error.
"""

import argparse
import json
import logging
import sys
from typing import Dict, List, Optional

from src.agents.behavior_analyzer import BehaviorAnalyzerAgent
from src.agents.data_curation import DEFAULT_RULES, CurationAgent, annotate_pass_rates, load_corpus, proxy_losses
from src.agents.metrics_reporter import MetricsReporterAgent, correlate, correlate_by_group, plot
from src.agents.trainer import TrainerAgent
from src.rl import verifier
from src.rl.policy import average_checkpoints, load_checkpoint, save_checkpoint, snapshot
from src.utils.config import default_config, load_config, parse_overrides
from src.utils.errors import ConfigError, ReasonIQError
from src.utils.log import configure_logging

logger = logging.getLogger("reasoniq")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ReasonIQParser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage by default; usage errors here exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def print_header(text):
    """Print formatted section header."""
    print("\n" + "=" * 80)
    print(f"  {text}")
    print("=" * 80)


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    overrides = parse_overrides(args.set or [])
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = args.output_dir
    if overrides:
        cfg = cfg.with_overrides(overrides)

    if not args.quiet:
        print_header("🚀 REASONIQ - RL WITH VERIFIABLE REWARDS")
    summary = TrainerAgent(cfg, corpus_path=args.corpus, verbose=not args.quiet).run()
    if args.report:
        MetricsReporterAgent(summary["metrics_path"], verbose=not args.quiet).run()
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_grade(args) -> int:
    """One JSON verdict per input: --pairs records, --response, --file lines, or stdin lines."""
    if args.pairs:
        with open(args.pairs, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                record = json.loads(line)
                verdict = verifier.grade(record["response"], record["reference"])
                print(json.dumps({"line": lineno, **verdict.to_dict()}))
        return EXIT_OK
    if args.reference is None:
        raise ConfigError("grade needs --ref, or --pairs")
    if args.response is not None:
        print(json.dumps(verifier.grade(args.response, args.reference).to_dict()))
        return EXIT_OK

    stream = open(args.file, "r", encoding="utf-8") if args.file else sys.stdin
    try:
        for line in stream:
            print(json.dumps(verifier.grade(line.rstrip("\n"), args.reference).to_dict()))
    finally:
        if args.file:
            stream.close()
    return EXIT_OK


def _parse_targets(pairs: List[str]) -> Dict[str, float]:
    targets = {}
    for pair in pairs:
        name, sep, weight = pair.partition("=")
        if not sep:
            raise ConfigError(f"category target {pair!r} must look like category=weight")
        try:
            targets[name.strip()] = float(weight)
        except ValueError:
            raise ConfigError(f"category target {pair!r} has a non-numeric weight") from None
    return targets


def cmd_curate(args) -> int:
    rules: Optional[List[str]] = None
    if args.default_rules or args.rule:
        rules = (list(DEFAULT_RULES) if args.default_rules else []) + list(args.rule or [])

    agent = CurationAgent(
        args.corpus,
        loss_quantile=args.loss_quantile,
        rules=rules,
        difficulty_bounds=tuple(args.difficulty) if args.difficulty else None,
        category_targets=_parse_targets(args.target) if args.target else None,
        verbose=not args.quiet,
    )
    corpus = agent.load()
    if args.reference_checkpoint:
        params = load_checkpoint(args.reference_checkpoint)
        if args.annotate_loss:
            corpus["proxy_loss"] = proxy_losses(corpus, params)
        if args.pass_rate_k:
            corpus = annotate_pass_rates(corpus, snapshot(params), k=args.pass_rate_k, seed=args.seed)
        agent.raw_corpus = corpus
    elif args.annotate_loss or args.pass_rate_k:
        raise ConfigError("--annotate-loss and --pass-rate-k need --reference-checkpoint")

    agent.run()
    paths = agent.save(args.output)
    print(json.dumps(paths, indent=2))
    return EXIT_OK


def cmd_analyze(args) -> int:
    agent = BehaviorAnalyzerAgent(args.traces, labels_path=args.labels,
                                  lexicon_path=args.lexicon, verbose=not args.quiet)
    report = agent.run()
    if args.output_dir:
        agent.save_report(args.output_dir)
    else:
        print(report.to_json(), end="")
    return EXIT_OK


def cmd_correlate(args) -> int:
    result = {"r": correlate(args.metrics)}
    if args.by_group:
        result["groups"] = correlate_by_group(args.metrics)
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_plot(args) -> int:
    print(plot(args.metrics, args.out))
    return EXIT_OK


def cmd_report(args) -> int:
    MetricsReporterAgent(args.metrics, output_dir=args.output_dir, verbose=not args.quiet).run()
    return EXIT_OK


def cmd_average(args) -> int:
    params = [load_checkpoint(p) for p in args.inputs]
    averaged = average_checkpoints(params)
    print(save_checkpoint(averaged, args.output))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = ReasonIQParser(prog="reasoniq", description="Desk-scale RL with verifiable rewards")
    parser.add_argument("--log-level", default=None, help="overrides REASONIQ_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ReasonIQParser)

    p = sub.add_parser("train", help="run the PPO training loop")
    p.add_argument("--config", help="JSON or YAML config file")
    p.add_argument("--corpus", help="task corpus JSONL (defaults to synthetic families)")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--report", action="store_true", help="write the chart and summary afterwards")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grade", help="grade responses against references")
    p.add_argument("--response")
    p.add_argument("--ref", "--reference", dest="reference")
    p.add_argument("--file", help="one response per line (stdin when omitted)")
    p.add_argument("--pairs", help="JSONL of {response, reference}")
    p.set_defaults(func=cmd_grade)

    p = sub.add_parser("curate", help="filter and reweight a prompt-answer corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--loss-quantile", type=float)
    p.add_argument("--default-rules", action="store_true", help="drop proof-style prompts")
    p.add_argument("--rule", action="append", help="literal rule, or re:<regex>")
    p.add_argument("--difficulty", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--target", action="append", metavar="CATEGORY=WEIGHT")
    p.add_argument("--reference-checkpoint", help="policy used for --annotate-loss / --pass-rate-k")
    p.add_argument("--annotate-loss", action="store_true")
    p.add_argument("--pass-rate-k", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("analyze", help="behavior emergence and transfer report")
    p.add_argument("--traces", required=True)
    p.add_argument("--labels", help="judge-label JSONL")
    p.add_argument("--lexicon", help="extra phrases (JSON or YAML)")
    p.add_argument("--output-dir")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("correlate", help="reward-length Pearson correlation")
    p.add_argument("metrics")
    p.add_argument("--by-group", action="store_true")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("plot", help="reward and length chart")
    p.add_argument("metrics")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("report", help="chart plus markdown run summary")
    p.add_argument("metrics")
    p.add_argument("--output-dir")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("average", help="uniformly average checkpoint files")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_average)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Execute one ReasonIQ command and return its exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ReasonIQError, OSError, ValueError, KeyError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"❌ Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
