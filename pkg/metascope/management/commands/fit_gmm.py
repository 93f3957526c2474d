"""Subcomando fit-gmm: una mezcla gaussiana por longitud de onda del PSFStack."""

from __future__ import annotations

from typing import Any

from django.core.management.base import CommandParser

from core.psfmodel import DEFAULT_COMPONENTS
from metascope.management.commands._base import MetascopeCommand
from metascope.services.pipeline import run_fit_gmm
from metascope.services.runs import RunConfig, StageResult
from metascope.utils.validators import validate_positive_float, validate_positive_int


class Command(MetascopeCommand):
    help = "Fit a 2-D Gaussian mixture to each PSF of a stack by expectation-maximization."
    subcommand = "fit-gmm"

    def add_stage_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--psf", required=True, help="PSF stack raster.")
        parser.add_argument("--k", default=str(DEFAULT_COMPONENTS), help="Mixture components.")
        parser.add_argument("--tol", default="1e-8", help="Relative log-likelihood tolerance.")
        parser.add_argument("--max-iter", default="500", help="Maximum EM iterations.")
        parser.add_argument("--out", required=True, help="Output mixtures JSON.")

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        psf = self.input_file(options, "psf")
        self.check(
            validate_positive_int(options["k"], name="--k"),
            validate_positive_float(options["tol"], name="--tol"),
            validate_positive_int(options["max_iter"], name="--max-iter"),
        )
        out = self.output_path(options, "out")
        run = self.run_config(options, inputs={"psf": psf}, outputs={"out": out})
        return run, {
            "psf_path": psf,
            "k": int(options["k"]),
            "tol": float(options["tol"]),
            "max_iter": int(options["max_iter"]),
            "out": out,
        }

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        return run_fit_gmm(seed=run.seed, threads=run.threads, **params)
