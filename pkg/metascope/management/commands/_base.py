"""
Base común de los subcomandos de metascope.

Contrato de salida:
- 0: éxito.
- 1: falla de validación (argumentos, unidades, rutas, esquema de documentos).
- 2: falla en ejecución (cualquier excepción posterior a la validación).

Cada subcomando implementa add_stage_arguments, prepare (valida y construye
RunConfig junto con sus parámetros) y execute_stage (trabajo real).
"""

from __future__ import annotations

import logging
import sys
import time
from pathlib import Path
from typing import Any, Final, NoReturn

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, CommandParser

import metascope
from core.units import parse_length, parse_length_list
from metascope.services.runs import RunConfig, StageResult, write_run_manifest
from metascope.utils.validators import (
    ValidationResult,
    validate_input_file,
    validate_length,
    validate_length_list,
    validate_output_path,
    validate_positive_int,
)

logger = logging.getLogger(__name__)

EXIT_VALIDATION: Final[int] = 1
EXIT_RUNTIME: Final[int] = 2
LOG_LEVELS: Final[tuple[str, ...]] = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
TOOLKIT_LOGGERS: Final[tuple[str, ...]] = ("core", "metascope")


class MetascopeCommand(BaseCommand):
    """Subcomando con opciones comunes, validación previa y manifiesto de corrida."""

    requires_system_checks: list[str] = []
    subcommand: str = ""

    def get_version(self) -> str:
        return f"metascope {metascope.__version__}"

    def create_parser(self, prog_name: str, subcommand: str, **kwargs: Any) -> CommandParser:
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # Los errores de argparse se convierten en CommandError (salida 1).
        parser.called_from_command_line = False
        return parser

    def run_from_argv(self, argv: list[str]) -> None:
        self._argv = tuple(argv[1:])
        try:
            super().run_from_argv(argv)
        except CommandError as exc:
            self.stderr.write(f"error: {exc}")
            sys.exit(exc.returncode)

    def add_arguments(self, parser: CommandParser) -> None:
        self.add_stage_arguments(parser)
        parser.add_argument("--seed", type=int, default=None, help="Random seed (default METASCOPE_SEED).")
        parser.add_argument("--threads", default=None, help="Worker threads (default METASCOPE_THREADS).")
        parser.add_argument(
            "--log-level",
            default=None,
            type=str.upper,
            choices=LOG_LEVELS,
            help="Log level for this run (default METASCOPE_LOG_LEVEL).",
        )

    def add_stage_arguments(self, parser: CommandParser) -> None:
        raise NotImplementedError

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        raise NotImplementedError

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        raise NotImplementedError

    # Validación

    def check(self, *results: ValidationResult) -> None:
        """Convierte el primer resultado fallido en un error de validación."""
        for result in results:
            if not result.ok:
                raise CommandError(result.message, returncode=EXIT_VALIDATION)

    def fail(self, message: str) -> NoReturn:
        raise CommandError(message, returncode=EXIT_VALIDATION)

    def length(self, options: dict[str, Any], key: str, *, default_unit: str | None = None) -> float:
        text = options[key]
        self.check(validate_length(text, name=f"--{key.replace('_', '-')}", default_unit=default_unit))
        return parse_length(text, default_unit=default_unit)

    def optional_length(self, options: dict[str, Any], key: str, default: float | None) -> float | None:
        return default if options.get(key) is None else self.length(options, key)

    def lengths(self, options: dict[str, Any], key: str, *, default_unit: str | None = None) -> tuple[float, ...]:
        text = options[key]
        self.check(validate_length_list(text, name=f"--{key.replace('_', '-')}", default_unit=default_unit))
        return parse_length_list(text, default_unit=default_unit)

    def input_file(self, options: dict[str, Any], key: str) -> Path:
        path = Path(options[key])
        self.check(validate_input_file(path, name=f"--{key.replace('_', '-')}"))
        return path

    def output_path(self, options: dict[str, Any], key: str, *, directory: bool = False) -> Path | None:
        if options.get(key) is None:
            return None
        path = Path(options[key])
        self.check(validate_output_path(path, name=f"--{key.replace('_', '-')}", directory=directory))
        return path

    def run_config(
        self,
        options: dict[str, Any],
        *,
        inputs: dict[str, Path],
        outputs: dict[str, Path | None],
        seed: int | None = None,
    ) -> RunConfig:
        threads = options.get("threads") or settings.METASCOPE_THREADS
        self.check(validate_positive_int(threads, name="--threads"))
        resolved_seed = seed if seed is not None else options.get("seed")
        return RunConfig(
            subcommand=self.subcommand,
            inputs=inputs,
            outputs={k: v for k, v in outputs.items() if v is not None},
            seed=settings.METASCOPE_SEED if resolved_seed is None else int(resolved_seed),
            threads=int(threads),
            log_level=options.get("log_level") or settings.METASCOPE_LOG_LEVEL,
            argv=getattr(self, "_argv", ()),
        )

    # Ejecución

    def _configure_logging(self, level: str | None) -> None:
        if level:
            for name in TOOLKIT_LOGGERS:
                logging.getLogger(name).setLevel(level)

    def handle(self, *args: Any, **options: Any) -> str:
        self._configure_logging(options.get("log_level"))
        run, params = self.prepare(options)

        started = time.perf_counter()
        try:
            result = self.execute_stage(run, params)
            write_run_manifest(run, result, wall_time_s=time.perf_counter() - started)
        except CommandError:
            raise
        except Exception as exc:
            logger.exception("Fallo en la etapa %s.", self.subcommand)
            raise CommandError(f"{self.subcommand} failed: {exc}", returncode=EXIT_RUNTIME) from exc
        return result.summary
