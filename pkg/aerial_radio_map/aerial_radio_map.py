"""Command line interface for building 3D radio maps from UAV flights."""

import argparse
import logging
import os
import pathlib
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import typing
from typing import Callable, List, Mapping, Optional, Sequence

from aerial_radio_map import config as run_config
from aerial_radio_map import defaults, utils
from aerial_radio_map.exceptions import (
    DataError,
    NumericalError,
    RadioMapError,
    StageFailure,
)
from aerial_radio_map.pipeline import run_pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

SUBCOMMANDS: Mapping[str, str] = {
    "fit": "compare path-loss models and antenna patterns",
    "shadowing": "extract shadowing and its statistics",
    "correlate": "estimate the 3D shadowing correlation model",
    "variogram": "build the semivariogram used for kriging",
    "krige": "predict received power at target locations",
    "xval": "cross-validate kriging against a target height",
    "map": "generate a gridded radio map",
    "synth": "generate a synthetic measurement campaign",
    "run": "run the stages listed under [pipeline] in the config",
}


class TomlFileAction(argparse.Action):
    @staticmethod
    def check_valid_toml_file(path: pathlib.Path) -> bool:
        try:
            utils.read_toml_data(path)
            return True
        except tomllib.TOMLDecodeError:
            return False

    def __call__(
        self,
        parser: argparse.ArgumentParser,
        namespace: argparse.Namespace,
        values,
        option_string: Optional[str] = None
    ):
        values = typing.cast(pathlib.Path, values)
        if not values.exists():
            parser.error(f"'{values}' does not exist.")
        if not values.is_file():
            parser.error(f"'{values}' is not a file.")
        if not self.check_valid_toml_file(values):
            parser.error(f"{values} does not appear to be a valid TOML file.")
        setattr(namespace, self.dest, values)


class SeedAction(argparse.Action):
    def __call__(
        self,
        parser: argparse.ArgumentParser,
        namespace: argparse.Namespace,
        values,
        option_string: Optional[str] = None
    ):
        try:
            seed = int(typing.cast(str, values), 0)
        except ValueError:
            parser.error(f"--seed expects an integer, got '{values}'")
        if not 0 <= seed < 2 ** 64:
            parser.error("--seed must be an unsigned 64 bit integer")
        setattr(namespace, self.dest, seed)


class ThreadsAction(argparse.Action):
    def __call__(
        self,
        parser: argparse.ArgumentParser,
        namespace: argparse.Namespace,
        values,
        option_string: Optional[str] = None
    ):
        try:
            threads = int(typing.cast(str, values))
        except ValueError:
            parser.error(f"--threads expects an integer, got '{values}'")
        if threads < 1:
            parser.error("--threads must be at least 1")
        setattr(namespace, self.dest, threads)


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    # Only default the config file if one exists relative to pwd
    if os.path.exists(defaults.DEFAULT_CONFIG_FILE):
        default_config_file: Optional[pathlib.Path] = pathlib.Path(
            defaults.DEFAULT_CONFIG_FILE
        )
        config_help = "run configuration (default: %(default)s)"
    else:
        default_config_file = None
        config_help = "run configuration"

    parser.add_argument(
        "--config",
        default=default_config_file,
        type=pathlib.Path,
        action=TomlFileAction,
        help=config_help
    )
    parser.add_argument(
        "--seed",
        default=None,
        action=SeedAction,
        help="top-level random seed (default: value in config)"
    )
    parser.add_argument(
        "--out",
        default="out",
        type=pathlib.Path,
        help="output directory for artifacts (default: %(default)s)"
    )
    parser.add_argument(
        "--threads",
        default=None,
        action=ThreadsAction,
        help="worker threads (default: value in config)"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        "--verbose", action="store_true", help="log debug messages"
    )
    verbosity.add_argument(
        "--quiet", action="store_true", help="only log warnings and errors"
    )


def get_args_parser() -> argparse.ArgumentParser:
    """Get CLI args parser."""
    parser = argparse.ArgumentParser(
        prog="aerial_radio_map",
        description="Build 3D radio maps from UAV received-power flights."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, help_text in SUBCOMMANDS.items():
        subparser = subparsers.add_parser(
            command, help=help_text, description=help_text
        )
        _add_common_arguments(subparser)
    return parser


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s"
    )


def exit_code_for(error: BaseException) -> int:
    """Stable exit code for an error, looking through stage failures.

    A stage failure whose cause is neither a data problem nor a numerical
    one still reports a numerical failure so the code stays in the contract.
    """
    if isinstance(error, StageFailure):
        cause = error.__cause__
        if isinstance(cause, (DataError, FileNotFoundError)):
            return EXIT_DATA
        return EXIT_NUMERICAL
    if isinstance(error, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(error, (DataError, FileNotFoundError)):
        return EXIT_DATA
    return 1


def stages_for(
    command: str, config: run_config.RadioMapConfig
) -> Sequence[str]:
    if command == "run":
        return config.pipeline.stages
    return (command,)


def main(
    argv: Optional[List[str]] = None,
    runner: Callable[..., object] = run_pipeline,
) -> int:
    args_parser = get_args_parser()
    args = args_parser.parse_args(argv)
    configure_logging(args)
    if args.config is None:
        args_parser.error(
            "--config is required when "
            f"{defaults.DEFAULT_CONFIG_FILE} does not exist"
        )

    try:
        config = run_config.load_config(args.config)
        runner(
            config,
            args.out,
            stages=stages_for(args.command, config),
            seed=args.seed,
            threads=args.threads,
        )
    except (RadioMapError, FileNotFoundError) as error:
        logger.error("%s", error)
        return exit_code_for(error)
    logger.info("Artifacts written to %s", args.out)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
