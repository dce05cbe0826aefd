"""
SceneGuard CLI - batch protection and evaluation recipes.

Usage:
    sceneguard protect --config experiment.toml
    sceneguard evaluate --config experiment.toml --clean-dir clean/ --protected-dir results/protected/
    sceneguard robustness --config experiment.toml --clean-dir clean/ --protected-dir results/protected/
    sceneguard ablate --config experiment.toml --mode snr_sweep
    sceneguard zeroshot --config experiment.toml --reference-dir refs/ \\
        --clean-synth-dir synth_clean/ --defended-synth-dir synth_defended/

Exit codes: 0 when every item succeeded, 1 when some items failed,
2 on configuration or input errors.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from sceneguard import __version__
from sceneguard.config import load_config
from sceneguard.errors import SceneGuardError
from sceneguard.monitoring import setup_logging
from sceneguard.runner import CommandResult, ExperimentRunner

logger = logging.getLogger(__name__)

ABLATION_MODES = ['snr_sweep', 'optimization', 'hyperparameter', 'baselines']


def cmd_protect(runner: ExperimentRunner, args: argparse.Namespace) -> CommandResult:
    """Protect every utterance in the corpus manifest."""
    return runner.protect_corpus()


def cmd_evaluate(runner: ExperimentRunner, args: argparse.Namespace) -> CommandResult:
    """Score protected files against their clean counterparts."""
    return runner.evaluate(args.clean_dir, args.protected_dir)


def cmd_robustness(runner: ExperimentRunner, args: argparse.Namespace) -> CommandResult:
    """Score protected files after each countermeasure."""
    return runner.robustness(args.clean_dir, args.protected_dir)


def cmd_ablate(runner: ExperimentRunner, args: argparse.Namespace) -> CommandResult:
    return runner.ablate(args.mode)


def cmd_zeroshot(runner: ExperimentRunner, args: argparse.Namespace) -> CommandResult:
    return runner.zeroshot(args.reference_dir, args.clean_synth_dir, args.defended_synth_dir)


def print_summary(command: str, result: CommandResult) -> None:
    print("\n" + "=" * 70)
    print(f"SCENEGUARD {command.upper()}")
    print("=" * 70)
    print(f"Failures: {result.failures}")
    for path in result.outputs:
        print(f"  wrote {path}")
    print("=" * 70 + "\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', required=True, type=Path, help='Experiment config (TOML or JSON)')
    common.add_argument('--seed', type=int, help='Override the experiment seed')
    common.add_argument('--jobs', type=int, help='Worker processes (0 = all cores)')
    common.add_argument('--out', type=Path, help='Output directory')
    common.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    common.add_argument('--quiet', '-q', action='store_true', help='Hide progress bars')

    parser = argparse.ArgumentParser(prog='sceneguard', description="SceneGuard batch CLI")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', help='Commands')

    subparsers.add_parser('protect', parents=[common], help='Protect a corpus')

    for name, help_text in (('evaluate', 'Evaluate protection and usability'),
                            ('robustness', 'Run the countermeasure matrix')):
        sub = subparsers.add_parser(name, parents=[common], help=help_text)
        sub.add_argument('--clean-dir', required=True, type=Path, help='Directory of clean <id>.wav files')
        sub.add_argument('--protected-dir', required=True, type=Path, help='Directory of protected <id>.wav files')

    ablate_parser = subparsers.add_parser('ablate', parents=[common], help='Run an ablation recipe')
    ablate_parser.add_argument('--mode', required=True, choices=ABLATION_MODES, help='Ablation to run')

    zeroshot_parser = subparsers.add_parser('zeroshot', parents=[common], help='Score zero-shot clones')
    zeroshot_parser.add_argument('--reference-dir', required=True, type=Path, help='Original speaker references')
    zeroshot_parser.add_argument('--clean-synth-dir', required=True, type=Path,
                                 help='Clones synthesized from clean references')
    zeroshot_parser.add_argument('--defended-synth-dir', required=True, type=Path,
                                 help='Clones synthesized from defended references')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 2

    commands = {
        'protect': cmd_protect,
        'evaluate': cmd_evaluate,
        'robustness': cmd_robustness,
        'ablate': cmd_ablate,
        'zeroshot': cmd_zeroshot,
    }

    try:
        overrides = {'seed': args.seed, 'jobs': args.jobs, 'output_dir': args.out}
        config = load_config(args.config, overrides)
        level_name = (args.log_level or config.log_level).upper()
        setup_logging(str(config.log_dir) if config.log_dir else None, getattr(logging, level_name, logging.INFO))

        runner = ExperimentRunner(config, show_progress=not args.quiet)
        result = commands[args.command](runner, args)
    except SceneGuardError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"\nError: {e}\n", file=sys.stderr)
        return 2

    print_summary(args.command, result)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
