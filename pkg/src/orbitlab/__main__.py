from __future__ import annotations

from collections.abc import Awaitable, Callable
from functools import wraps
import logging
from pathlib import Path
import shlex
import sys
from typing import ParamSpec

import asyncclick as click
from pydantic import ValidationError
from ruamel.yaml import YAMLError

from .config import ExperimentConfig
from .errors import ConfigError, OrbitlabError
from .experiment import run, run_spectrum, validate
from .logging import log
from .util import pdb_excepthook, yaml_dump

P = ParamSpec("P")

config_argument = click.argument(
    "config", type=click.Path(dir_okay=False, exists=True, path_type=Path)
)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "-l",
    "--log-level",
    type=click.Choice(["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"]),
    default="INFO",
    help="Set logging level",
    show_default=True,
)
@click.option("--pdb", is_flag=True, help="Drop into debugger if an error occurs")
async def main(log_level: str, pdb: bool) -> None:
    """
    Find periodic orbits on energy levels near a symplectic extremum.

    Each command takes a YAML experiment configuration.  The output directory
    can be overridden with the ORBITLAB_OUTPUT_DIR environment variable.
    """
    if pdb:
        sys.excepthook = pdb_excepthook
    logging.basicConfig(
        format="%(asctime)s [%(levelname)-8s] %(name)s: %(message)s",
        datefmt="%Y-%m-%dT%H:%M:%S%z",
        level=getattr(logging, log_level),
    )
    log.info("COMMAND: %s", shlex.join(sys.argv))


def exit_status(e: Exception) -> int:
    if isinstance(e, OrbitlabError):
        return e.exit_code
    elif isinstance(e, (ValidationError, YAMLError)):
        return ConfigError.exit_code
    else:
        return 1


def exit_with_status(f: Callable[P, Awaitable[None]]) -> Callable[P, Awaitable[None]]:
    @wraps(f)
    async def wrapped(*args: P.args, **kwargs: P.kwargs) -> None:
        try:
            await f(*args, **kwargs)
        except Exception as e:
            log.exception("An error occurred:")
            sys.exit(exit_status(e))
        sys.exit(0)

    return wrapped


@main.command("validate")
@config_argument
@exit_with_status
async def validate_cmd(config: Path) -> None:
    """Check a configuration and print the derived parameters"""
    cfg = ExperimentConfig.load_yaml(config)
    report = validate(cfg)
    click.echo(yaml_dump(report.to_dict()), nl=False)
    if report:
        log.info("%s", report.get_summary())
    else:
        log.warning("%s", report.get_summary())


@main.command("run")
@config_argument
@exit_with_status
async def run_cmd(config: Path) -> None:
    """Run the configured experiment and write its results"""
    cfg = ExperimentConfig.load_yaml(config)
    await run(cfg)
    log.info("Results written to %s", cfg.output_dir)


@main.command("spectrum")
@config_argument
@exit_with_status
async def spectrum_cmd(config: Path) -> None:
    """Tabulate the symplectic spectrum of the normal Hessian over the base"""
    cfg = ExperimentConfig.load_yaml(config)
    run_spectrum(cfg)
    log.info("Spectrum written to %s", cfg.output_dir)


if __name__ == "__main__":
    main(_anyio_backend="asyncio")
