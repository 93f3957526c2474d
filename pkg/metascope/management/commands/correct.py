"""Subcomando correct: corrección informada por la óptica de imágenes degradadas."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from django.conf import settings
from django.core.management.base import CommandParser
from pydantic import ValidationError

from core.degrade import DegradeConfigDocument, load_degrade_config
from core.psfmodel import DEFAULT_KERNEL_SIDE, load_mixtures
from metascope.management.commands._base import MetascopeCommand
from metascope.services.pipeline import run_correct
from metascope.services.runs import RunConfig, StageResult
from metascope.utils.validators import (
    validate_document,
    validate_input_path,
    validate_positive_float,
    validate_positive_int,
)


class Command(MetascopeCommand):
    help = "Correct degraded images: prior inversion, offset aggregation and Wiener deconvolution."
    subcommand = "correct"

    def add_stage_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--in", dest="source", required=True, help="Dataset directory, PNG directory or PNG file.")
        parser.add_argument("--config", required=True, help="Degrade configuration JSON used to make the inputs.")
        parser.add_argument("--gmm", required=True, help="Mixtures JSON from fit-gmm.")
        parser.add_argument("--out", required=True, help="Output directory.")
        parser.add_argument("--snr", default=None, help="Wiener signal-to-noise ratio (default METASCOPE_WIENER_SNR).")
        parser.add_argument("--m", default=str(DEFAULT_KERNEL_SIDE), help="Offset pattern side (M*M offsets).")
        parser.add_argument("--no-occ", action="store_true", help="Skip the offset aggregation stage.")

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        source = Path(options["source"])
        self.check(validate_input_path(source, name="--in"))
        config = self.input_file(options, "config")
        gmm = self.input_file(options, "gmm")
        snr = options["snr"] or settings.METASCOPE_WIENER_SNR
        self.check(
            validate_document(config, DegradeConfigDocument, name="--config"),
            validate_positive_float(snr, name="--snr"),
            validate_positive_int(options["m"], name="--m"),
        )
        try:
            cfg = load_degrade_config(config)
        except ValueError as exc:
            self.fail(f"--config: {exc}")
        try:
            mixtures = load_mixtures(gmm)
        except (ValidationError, ValueError) as exc:
            self.fail(f"--gmm: invalid mixtures document: {exc}")

        out = self.output_path(options, "out", directory=True)
        run = self.run_config(options, inputs={"in": source, "config": config, "gmm": gmm}, outputs={"out": out})
        return run, {
            "source": source,
            "cfg": cfg,
            "mixtures": mixtures,
            "out_dir": out,
            "snr": float(snr),
            "use_occ": not options["no_occ"],
            "m": int(options["m"]),
        }

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        return run_correct(threads=run.threads, **params)
