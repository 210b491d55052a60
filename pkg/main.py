"""
Main entry point for the compositional abstraction toolkit
Subcommands: abstract, compose, check, synthesize, bench, stats, harness
"""
import argparse
import json
import logging
import os
import sys
from typing import Dict, List

import pandas as pd

from abstractor import TimeBudgetExceeded
from benchmark import compositional_cells, make_bench_spec, monolithic_cells
from config import Config
from pipeline import RunReport, StageError, abstract_spec, compare, run_monolithic, run_pipeline, stats, write_artifacts
from predicates import MemoryBudgetExceeded
from refinement import composition_harness, hiding_harness
from system_spec import load_spec, validate_spec

logging.basicConfig(
    level=getattr(logging, Config.LOG_LEVEL),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler(Config.LOG_FILE),
        logging.StreamHandler()
    ]
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_CHECK_FAILED = 4


def banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def print_modules(rows: List[Dict]):
    if not rows:
        print("No modules")
        return
    columns = ['name', 'inputs', 'outputs', 'cells', 'transitions', 'blocking_inputs', 'nodes']
    df = pd.DataFrame(rows)
    df['inputs'] = df['inputs'].apply(','.join)
    df['outputs'] = df['outputs'].apply(','.join)
    print(df[[c for c in columns if c in df.columns]].to_string(index=False))


def print_report(report: RunReport):
    print_modules(report.modules)
    if report.composed:
        composed = report.composed
        print(f"\nComposed ({report.strategy}): {composed['transitions']} transitions "
              f"({composed['transitions']:.2e}), {composed['blocking_inputs']} blocking inputs, "
              f"{composed['nodes']} nodes")
    print(f"Cells traversed: {report.cells_traversed}")
    if report.check:
        print(f"Check: {report.check['verdict']}")
        for note in report.check['notes']:
            print(f"  {note}")
    if report.controller:
        c = report.controller
        print(f"Controller ({c['kind']}): {c['domain_states']} of {c['state_count']} states")
    for stage, seconds in report.stage_seconds.items():
        print(f"  {stage:<12} {seconds:8.3f}s")


def parse_box(items: List[str]) -> Dict[str, List[float]]:
    """['x1=4:28', ...] -> {'x1': [4.0, 28.0]}"""
    box = {}
    for item in items or []:
        try:
            name, bounds = item.split('=', 1)
            lo, hi = bounds.split(':', 1)
            box[name.strip()] = [float(lo), float(hi)]
        except ValueError:
            raise ValueError(f"Bad box bound {item!r}, expected name=lo:hi")
    return box


def _hidden(value: str):
    if value is None:
        return None
    return [name.strip() for name in value.split(',') if name.strip()]


def cmd_abstract(args) -> int:
    spec = load_spec(args.spec)
    banner(f"Abstracting {spec.name}")
    report = RunReport(spec.name, 'none')
    run = abstract_spec(spec, report, n_jobs=args.jobs)
    print_modules(report.modules)
    if args.dump:
        if args.dump not in run.modules:
            raise ValueError(f"No module {args.dump} in {spec.name}, have {sorted(run.modules)}")
        m = run.modules[args.dump]
        print(run.context.dump_assignments(m.constraint, m.inputs + m.outputs), end='')
    if args.out:
        write_artifacts(run, os.path.join(args.out, spec.name))
    return EXIT_OK


def cmd_compose(args) -> int:
    spec = load_spec(args.spec)
    banner(f"Composing {spec.name}")
    run = run_pipeline(spec, args.strategy, _hidden(args.hide), n_jobs=args.jobs, artifact_dir=args.out)
    print_report(run.report)
    return EXIT_OK


def cmd_check(args) -> int:
    spec = load_spec(args.spec)
    banner(f"Checking {spec.name} at eta/{args.resolution or Config.CHECK_RESOLUTION}")
    run = run_pipeline(spec, args.strategy, _hidden(args.hide), check=True, n_jobs=args.jobs,
                       artifact_dir=args.out, resolution=args.resolution)
    print_report(run.report)
    print(json.dumps(run.check.to_dict(), indent=2))
    return EXIT_OK if run.check.passed else EXIT_CHECK_FAILED


def cmd_synthesize(args) -> int:
    spec = load_spec(args.spec)
    objective = spec.synthesis
    if args.objective:
        objective = {'spec': args.objective, 'box': parse_box(args.box)}
    if objective is None:
        raise ValueError("No synthesis objective: pass --spec and --box or add a synthesis section")
    banner(f"Synthesizing {objective['spec']} controller for {spec.name}")
    run = run_pipeline(spec, args.strategy, synthesize=objective, n_jobs=args.jobs, artifact_dir=args.out)
    print_report(run.report)
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = validate_spec(make_bench_spec(args.n, args.cells, args.gain))
    banner(f"Benchmark N={args.n}")
    print(f"Monolithic grid: {monolithic_cells(args.n, args.cells)} cells, "
          f"compositional: {compositional_cells(args.n, args.cells)} cells")
    run = run_pipeline(spec, args.strategy, _hidden(args.hide), check=args.check, n_jobs=args.jobs,
                       artifact_dir=args.out)
    print_report(run.report)
    code = EXIT_OK
    if run.check is not None and not run.check.passed:
        print(f"Counterexample ({run.check.condition}): {run.check.witness}")
        code = EXIT_CHECK_FAILED
    if args.monolithic:
        banner(f"Monolithic abstraction (budget {args.budget or Config.MONOLITHIC_BUDGET}s)")
        try:
            mono = run_monolithic(spec, args.budget, base=run, n_jobs=args.jobs)
        except TimeBudgetExceeded as e:
            logger.error(f"Monolithic abstraction stopped: {e}")
            print(f"Traversed {e.cells_traversed} of {e.cells_total} cells before the budget ran out")
            return EXIT_BUDGET
        print_report(mono.report)
        relation = compare(run.control or run.composed, mono.control)
        print(pd.DataFrame([relation]).to_string(index=False))
        if not (relation['blocking_contained'] and relation['transitions_contained']):
            code = EXIT_CHECK_FAILED
    return code


def cmd_stats(args) -> int:
    summary = stats(args.path)
    banner(f"Stats for {args.path}")
    print(f"Transitions: {summary['transitions']} ({summary['transitions']:.2e})")
    print(f"Nodes: {summary['nodes']}")
    if summary['blocking_fraction'] is not None:
        print(f"Blocking fraction: {summary['blocking_fraction']:.4f}")
    return EXIT_OK


def cmd_harness(args) -> int:
    banner(f"{args.which.capitalize()} harness")
    if args.which == 'composition':
        result = composition_harness(args.trials, args.max_bits, args.seed,
                                     negative_control=args.negative_control,
                                     jsonl_path=args.out, n_jobs=args.jobs)
    else:
        result = hiding_harness(args.trials, args.max_bits, args.seed, jsonl_path=args.out, n_jobs=args.jobs)
    print(json.dumps(result.to_dict(), indent=2))
    sound_failures = [r for r in result.failures if r['premise']]
    return EXIT_CHECK_FAILED if sound_failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Compositional abstraction toolkit')
    parser.add_argument('--jobs', type=int, default=None, help=f'joblib workers (default: {Config.N_JOBS})')
    sub = parser.add_subparsers(dest='command', required=True)

    def spec_command(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('spec', help='SystemSpec file (.json, .yaml)')
        p.add_argument('--out', default=Config.ARTIFACT_DIR,
                       help=f'Artifact parent directory, empty for none (default: {Config.ARTIFACT_DIR})')
        p.set_defaults(handler=handler)
        return p

    p = spec_command('abstract', cmd_abstract, 'Abstract every module of a spec')
    p.add_argument('--dump', default=None, metavar='MODULE', help='Print the assignment dump of one module')
    for name, handler, help_text in (('compose', cmd_compose, 'Abstract, compose and hide latents'),
                                     ('check', cmd_check, 'Compose, then check against sampled dynamics')):
        p = spec_command(name, handler, help_text)
        p.add_argument('--strategy', choices=['cone', 'flat'], default='cone')
        p.add_argument('--hide', default=None, help='Comma separated latents (default: all)')
        if name == 'check':
            p.add_argument('--resolution', type=int, default=None, help='Samples per eta')

    p = spec_command('synthesize', cmd_synthesize, 'Compose, then synthesize a controller')
    p.add_argument('--strategy', choices=['cone', 'flat'], default='cone')
    p.add_argument('--spec', dest='objective', choices=['safety', 'reach'], default=None)
    p.add_argument('--box', nargs='+', default=None, help='Bounds like x1=4:28')

    p = sub.add_parser('bench', help='Logistic consensus benchmark')
    p.add_argument('--n', type=int, default=6, help='Number of states (default: 6)')
    p.add_argument('--cells', type=int, default=None, help=f'Cells per state (default: {Config.BENCH_CELLS})')
    p.add_argument('--gain', type=float, default=None, help=f'Consensus gain (default: {Config.BENCH_GAIN})')
    p.add_argument('--strategy', choices=['cone', 'flat'], default='cone')
    p.add_argument('--hide', default=None, help='Comma separated latents (default: all)')
    p.add_argument('--check', action='store_true', help='Check against sampled dynamics')
    p.add_argument('--monolithic', action='store_true', help='Also abstract monolithically and compare')
    p.add_argument('--budget', type=float, default=None,
                   help=f'Monolithic time budget in seconds (default: {Config.MONOLITHIC_BUDGET})')
    p.add_argument('--out', default=Config.ARTIFACT_DIR,
                   help=f'Artifact parent directory, empty for none (default: {Config.ARTIFACT_DIR})')
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser('stats', help='Summarize a predicate artifact')
    p.add_argument('path')
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser('harness', help='Randomized composition and hiding trials')
    p.add_argument('which', choices=['composition', 'hiding'])
    p.add_argument('--trials', type=int, default=None, help=f'default: {Config.HARNESS_TRIALS}')
    p.add_argument('--seed', type=int, default=None, help=f'default: {Config.HARNESS_SEED}')
    p.add_argument('--max-bits', type=int, default=3)
    p.add_argument('--negative-control', action='store_true', help='Use an unsound component abstraction')
    p.add_argument('--out', default=None, help='JSONL file with one record per trial')
    p.set_defaults(handler=cmd_harness)
    return parser


def main(argv=None) -> int:
    """Main function"""
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except StageError as e:
        logger.error(f"Stage {e.stage} failed: {e.error}")
        return _exit_code(e.error)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        return _exit_code(e)


def _exit_code(error: Exception) -> int:
    if isinstance(error, (TimeBudgetExceeded, MemoryBudgetExceeded)):
        return EXIT_BUDGET
    if isinstance(error, (ValueError, OSError)):
        return EXIT_VALIDATION
    raise error


if __name__ == "__main__":
    sys.exit(main())
