import argparse
import logging
import sys
from typing import List, Optional

from fssam.config import load_pipeline_config, load_synth_spec, log_level
from fssam.errors import FssamError
from fssam.main import (run_generation, run_priors, run_refinement, run_evaluation, run_ablation,
                        run_stats, run_sweep, print_table, metrics_table, ablation_table,
                        stats_table, sweep_table)

logger = logging.getLogger(__name__)


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='JSON file with PipelineConfig keys')
    parser.add_argument('--iters', type=int, help='IMR iteration count n')
    parser.add_argument('--alpha', type=float, help='SCMA suppression strength')
    parser.add_argument('--head', choices=['fused', 'prior'], help='Prediction head')
    parser.add_argument('--workers', type=int, help='Concurrent episode workers')
    parser.add_argument('--no-imr', action='store_true', help='Skip iterative memory refinement')
    parser.add_argument('--no-scma', action='store_true', help='Run cross-attention uncalibrated')


def _add_episode_flags(parser: argparse.ArgumentParser, report: str) -> None:
    _add_pipeline_flags(parser)
    parser.add_argument('--episodes', required=True, help='Episode directory written by gen')
    parser.add_argument('--shots', type=int, help='Use only the first k supports of each episode')
    parser.add_argument('--report', default=report, help=f'JSON report path (default: {report})')
    parser.add_argument('--progress', action='store_true', help='Show a progress bar')


def _add_single_flags(parser: argparse.ArgumentParser) -> None:
    _add_pipeline_flags(parser)
    parser.add_argument('--query', required=True, help='Query feature file (FSSF)')
    parser.add_argument('--support', required=True, help='Support feature file (FSSF)')
    parser.add_argument('--mask', required=True, help='Support mask file (FSSF)')
    parser.add_argument('--out', required=True, help='Output directory')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Few-shot segmentation matching pipeline')
    parser.add_argument('--log-level', help='Logging level (default: FSSAM_LOG_LEVEL or INFO)')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen', help='Generate a synthetic episode set')
    gen.add_argument('--spec', required=True, help='JSON file with SynthSpec keys')
    gen.add_argument('--out', required=True, help='Output episode directory')

    _add_single_flags(commands.add_parser('prior', help='Write FG/BG/Disc priors of one query'))
    _add_single_flags(commands.add_parser('refine', help='Write per-iteration refined priors'))

    _add_episode_flags(commands.add_parser('eval', help='Evaluate the pipeline'), 'eval_report.json')
    _add_episode_flags(commands.add_parser('ablate', help='Evaluate the component ablation'), 'ablation_report.json')
    _add_episode_flags(commands.add_parser('stats', help='Per-layer BG score suppression'), 'stats_report.json')
    sweep = commands.add_parser('sweep', help='Evaluate several IMR iteration counts')
    _add_episode_flags(sweep, 'sweep_report.json')
    sweep.add_argument('--iters-list', default='0,1,2,3,4', help='Comma-separated iteration counts')
    return parser


def _pipeline_config(args: argparse.Namespace):
    """Config file, then environment, then flags"""
    cfg = load_pipeline_config(args.config)
    if args.iters is not None:
        cfg.imr_iterations = args.iters
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if args.head is not None:
        cfg.head = args.head
    if args.workers is not None:
        cfg.workers = args.workers
    if args.no_imr:
        cfg.use_imr = False
    if args.no_scma:
        cfg.use_scma_calibration = False
    return cfg.validate()


def _iteration_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--iters-list must be comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("--iters-list is empty")
    return values


def dispatch(args: argparse.Namespace) -> None:
    if args.command == 'gen':
        count = run_generation(load_synth_spec(args.spec), args.out)
        print(f"Wrote {count} episodes to {args.out}")
        return

    cfg = _pipeline_config(args)
    if args.command == 'prior':
        names = run_priors(args.query, args.support, args.mask, args.out, cfg)
        print(f"Wrote {', '.join(names)} to {args.out}")
    elif args.command == 'refine':
        names = run_refinement(args.query, args.support, args.mask, args.out, cfg)
        print(f"Wrote {len(names)} snapshots to {args.out}")
    elif args.command == 'eval':
        report = run_evaluation(args.episodes, cfg, args.shots, args.report, args.progress)
        print_table(f"Metrics over {report.episode_count} episodes", metrics_table(report))
    elif args.command == 'ablate':
        report = run_ablation(args.episodes, cfg, args.shots, args.report, args.progress)
        print_table("Ablation", ablation_table(report))
    elif args.command == 'stats':
        report = run_stats(args.episodes, cfg, args.shots, args.report, args.progress)
        print_table("Cross-attention score on FG rows x BG columns", stats_table(report))
    elif args.command == 'sweep':
        reports = run_sweep(args.episodes, cfg, _iteration_list(args.iters_list), args.shots,
                            args.report, args.progress)
        print_table("IMR iteration sweep", sweep_table(reports))


def cli_main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    level = (args.log_level or log_level()).upper()
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, level, logging.INFO)
    )

    try:
        dispatch(args)
    except argparse.ArgumentTypeError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        logger.error(f"Missing file: {e}")
        print(f"Error: missing file: {e.filename or e}", file=sys.stderr)
        return 1
    except (FssamError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(cli_main())
