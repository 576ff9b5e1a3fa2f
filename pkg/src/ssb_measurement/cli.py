"""
Command-line entry point: ``ssb-measure <kind> [options]``

Exit status: 0 on success, 2 for configuration and domain errors, 3 for
numerical failures, 4 when --strict escalates quality warnings, 1 for
anything else the library raises (including unwritable outputs).
"""
import argparse
import asyncio
import logging
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from . import __version__
from .config import SimulationSettings
from .exceptions import ConfigurationError, SimulationError
from .harness import ExperimentConfig, ExperimentKind, default_config, load_config, run_experiment
from .results import emit_results

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssb-measure",
        description="Stochastic measurement, EPR/CHSH and reheating-spectrum experiments.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="kind", required=True, metavar="KIND")
    for kind in ExperimentKind:
        sub = subparsers.add_parser(kind.value, help=f"run the {kind.value} experiment")
        sub.add_argument("--config", type=Path, help="TOML experiment config")
        sub.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sub.add_argument("--n", type=int, help="trials per ensemble (overrides the config)")
        sub.add_argument("--workers", type=int, help="worker threads (overrides the config)")
        sub.add_argument("--out", type=Path, help="output directory")
        sub.add_argument(
            "--strict", action="store_true", help="fail with exit status 4 on quality warnings"
        )
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file (if any) with the command-line overrides applied."""
    kind = ExperimentKind(args.kind)
    overrides = {
        "master_seed": args.seed,
        "n": args.n,
        "workers": args.workers,
        "strict": True if args.strict else None,
    }
    if args.config is None:
        return default_config(kind, **overrides)
    config = load_config(args.config, **overrides)
    if config.kind is not kind:
        raise ConfigurationError(
            f"Config {args.config} describes a '{config.kind.value}' experiment, "
            f"not '{kind.value}'"
        )
    return config


def _load_settings() -> SimulationSettings:
    try:
        return SimulationSettings()
    except ValidationError as e:
        raise ConfigurationError(f"Invalid runtime settings: {e}") from e


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = _load_settings()
        logging.basicConfig(
            level=logging.DEBUG if settings.debug else logging.INFO, format=LOG_FORMAT
        )
        config = resolve_config(args)
        bundle = run_experiment(config, settings=settings)

        if args.out is not None:
            directory = args.out
        elif config.output.directory is not None:
            directory = Path(config.output.directory)
        else:
            directory = settings.output_dir
        summary_path, table_path = asyncio.run(
            emit_results(bundle, directory, config.output.stem)
        )
    except SimulationError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        for note in getattr(e, "__notes__", []):
            logger.error(f"[CLI] {note}")
        return e.exit_code

    print(summary_path)
    print(table_path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
