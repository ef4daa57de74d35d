"""
Command-line front end.

    scooplock run corpus/dining_wrong.scp
    scooplock explore corpus/dining_correct.scp --depth 200
    scooplock abstract corpus/conditional_alias.scp --alias-depth 3
    scooplock replay corpus/dining_wrong.scp trace.jsonl
    scooplock rules

Exit codes: 0 finished without deadlock, 2 deadlock found, 1 usage or input error.
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from backend.abstract_semantics import explore_abstract, run_abstract
from backend.deadlock import detect_deadlock
from backend.errors import ScoopError, ValidationFailed
from backend.explorer import ExplorationReport, Explorer, Trace
from backend.file_manager import FileManager
from backend.rule_registry import RuleRegistry
from backend.runtime import Status, lock_sets
from backend.settings import RunConfig
from backend.strategy import parse_strategy

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEADLOCK = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='scooplock',
        description='Run, explore and check mini-SCOOP programs for deadlocks',
    )
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for progress, -vv for every fired rule')
    parser.add_argument('--config-dir', default='.',
                        help='directory holding config/settings.json [default: .]')
    subparsers = parser.add_subparsers(dest='mode')

    def common(sub):
        sub.add_argument('input_path', help='.scp program')
        sub.add_argument('--format', dest='output_format', choices=['text', 'json'], default=None)
        sub.add_argument('--deadlock', choices=['on', 'off'], default=None,
                         help='override the deadlock-on/off setting of the program')
        sub.add_argument('--output', dest='output_path', default=None,
                         help='also write the JSON report to this file')

    run = subparsers.add_parser('run', help='follow a strategy on one interleaving')
    common(run)
    run.add_argument('--strategy', default=None,
                     help='strategy expression, or a file containing one')
    run.add_argument('--trace-out', default=None, help='write the followed trace as JSON lines')

    explore = subparsers.add_parser('explore', help='breadth-first search over all interleavings')
    common(explore)
    explore.add_argument('--depth', dest='depth_bound', type=int, default=None)
    explore.add_argument('--states', dest='state_bound', type=int, default=None)
    explore.add_argument('--workers', type=int, default=None)
    explore.add_argument('--trace-out', default=None, help='write the first deadlocking trace as JSON lines')

    abstract = subparsers.add_parser('abstract', help='may-alias abstract semantics')
    common(abstract)
    abstract.add_argument('--alias-depth', dest='alias_depth', type=int, default=None)
    abstract.add_argument('--depth', dest='depth_bound', type=int, default=None)
    abstract.add_argument('--states', dest='state_bound', type=int, default=None)
    abstract.add_argument('--single', action='store_true',
                          help="follow the program's strategy (or the guided one) instead of exploring")

    replay = subparsers.add_parser('replay', help='re-execute a recorded trace')
    common(replay)
    replay.add_argument('trace_path', help='trace file written by --trace-out')

    subparsers.add_parser('rules', help='list the transition rules')
    return parser


def _configure_logging(verbosity: int):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s', stream=sys.stderr)


def _strategy_text(value: Optional[str]) -> Optional[str]:
    if value and os.path.isfile(value):
        with open(value, 'r', encoding='utf-8') as f:
            return f.read().strip()
    return value


def _deadlock_flag(value: Optional[str]) -> Optional[bool]:
    if value is None:
        return None
    return value == 'on'


def run_config_from_args(args, settings) -> RunConfig:
    return RunConfig.from_settings(
        settings,
        input_path=args.input_path,
        mode=args.mode,
        strategy=_strategy_text(getattr(args, 'strategy', None)),
        depth_bound=getattr(args, 'depth_bound', None),
        state_bound=getattr(args, 'state_bound', None),
        alias_depth=getattr(args, 'alias_depth', None),
        output_format=args.output_format,
        deadlock_check=_deadlock_flag(args.deadlock),
        workers=getattr(args, 'workers', None),
        trace_path=getattr(args, 'trace_path', None),
        output_path=args.output_path,
    )


def execute(config: RunConfig, files: FileManager, strategy_override: bool = False,
            single: bool = False) -> ExplorationReport:
    """Load the program and dispatch on the mode"""
    program = files.load_program(config.input_path)

    if config.mode == 'run':
        text = config.strategy if strategy_override or not program.strategy else program.strategy
        return Explorer(program, config.deadlock_check).run_strategy(parse_strategy(text))

    if config.mode == 'explore':
        explorer = Explorer(program, config.deadlock_check, config.workers)
        return explorer.explore_bounded(config.depth_bound, config.state_bound)

    if config.mode == 'abstract':
        if single:
            return run_abstract(program, config.alias_depth, config.deadlock_check)
        return explore_abstract(program, config.depth_bound, config.state_bound, config.alias_depth,
                                config.deadlock_check, config.workers)

    trace = files.load_trace(config.trace_path)
    explorer = Explorer(program)
    final = explorer.replay(trace)
    report = ExplorationReport('replay', explorer.program_hash, states_visited=len(trace) + 1,
                               trace=trace, final=final, holdings=lock_sets(final))
    if final.terminal == Status.DEADLOCK:
        report.deadlocks.append((trace, detect_deadlock(final)))
    elif final.terminal == Status.DONE:
        report.completed_traces = 1
    return report


def render_text(report: ExplorationReport) -> str:
    lines = [
        f"mode: {report.mode}",
        f"program: {report.program_hash[:12]}",
        f"states visited: {report.states_visited}",
    ]
    if report.trace is not None:
        trace = report.trace
        lines.append(f"steps: {len(trace)} ({trace.processor_steps} processor-steps)")
        lines.append(f"result: {trace.terminal.value}")
    if report.mode in ('explore', 'abstract'):
        lines.append(f"completed traces: {report.completed_traces}")
        lines.append(f"deadlocking traces: {len(report.deadlocks)}")
        if report.bound_hit:
            lines.append("bound hit: exploration was cut off")
    if report.final is not None and report.final.terminal == Status.DEADLOCK:
        for p, held in report.holdings.items():
            if held:
                name = f"p{p}" if p.isdigit() else p
                lines.append(f"  {name} holds {{{', '.join(str(h) for h in held)}}}")
    if report.deadlocks:
        trace, witness = report.deadlocks[0]
        lines.append(f"deadlock: processors {{{', '.join(str(p) for p in sorted(witness.processors))}}}"
                     f" after {len(trace)} steps")
        lines.extend(f"  {line}" for line in witness.describe())
    return "\n".join(lines)


def _trace_to_save(report: ExplorationReport) -> Optional[Trace]:
    if report.mode == 'explore':
        return report.deadlocks[0][0] if report.deadlocks else None
    return report.trace


def run_cli(argv: List[str]) -> int:
    """Parse argv, dispatch on the subcommand, print the report and return the exit code"""
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_ERROR

    _configure_logging(args.verbose)
    if args.mode is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    if args.mode == 'rules':
        print(RuleRegistry.generate_rule_reference())
        return EXIT_OK

    files = FileManager(args.config_dir)
    try:
        config = run_config_from_args(args, files.load_settings())
        report = execute(config, files,
                         strategy_override=getattr(args, 'strategy', None) is not None,
                         single=getattr(args, 'single', False))
        trace_out = getattr(args, 'trace_out', None)
        if trace_out:
            trace = _trace_to_save(report)
            if trace is None:
                logger.warning("no trace to write to %s", trace_out)
            else:
                files.save_trace(trace, trace_out)
        if config.output_path:
            files.save_report(report, config.output_path)
    except ValidationFailed as e:
        for diagnostic in e.diagnostics:
            print(f"{args.input_path}:{diagnostic.line}:{diagnostic.col}: {diagnostic.code}: "
                  f"{diagnostic.message}", file=sys.stderr)
        return EXIT_ERROR
    except ScoopError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR

    if config.output_format == 'json':
        print(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    else:
        print(render_text(report))
    return EXIT_DEADLOCK if report.deadlock_found else EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    return run_cli(sys.argv[1:] if argv is None else argv)


if __name__ == '__main__':
    sys.exit(main())
