"""Subcomando design: escribe el documento de diseño de la metalente."""

from __future__ import annotations

from typing import Any

from django.core.management.base import CommandParser
from pydantic import ValidationError

from core.lens import AchromaticDesign, LensDesign, load_meta_atom_lut
from core.units import um_to_mm, um_to_nm
from metascope.management.commands._base import MetascopeCommand
from metascope.services.pipeline import run_design
from metascope.services.runs import RunConfig, StageResult


class Command(MetascopeCommand):
    help = "Write a metalens design document (diameter, focal length, design wavelength, phase mode)."
    subcommand = "design"

    def add_stage_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--diameter", required=True, help="Lens diameter with unit, e.g. 2.6mm.")
        parser.add_argument("--focal", required=True, help="Design focal length with unit, e.g. 10mm.")
        parser.add_argument("--wavelength", required=True, help="Design wavelength with unit, e.g. 532nm.")
        parser.add_argument("--phase-mode", choices=("ideal", "achromatic", "lut"), default="ideal")
        parser.add_argument("--focal-scaling", choices=("diffractive", "proportional"), default="diffractive")
        parser.add_argument("--lambda-min", default=None, help="Achromatic band lower edge, e.g. 450nm.")
        parser.add_argument("--lambda-max", default=None, help="Achromatic band upper edge, e.g. 650nm.")
        parser.add_argument("--delta", type=float, default=0.0, help="Maximum achromatic phase delay (rad).")
        parser.add_argument("--lut", default=None, help="Meta-atom library JSON (phase mode lut).")
        parser.add_argument("--out", required=True, help="Output lens JSON.")

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        diameter = self.length(options, "diameter")
        focal = self.length(options, "focal")
        wavelength = self.length(options, "wavelength")

        achromatic = None
        if options["phase_mode"] == "achromatic":
            if options["lambda_min"] is None or options["lambda_max"] is None:
                self.fail("--phase-mode achromatic requires --lambda-min and --lambda-max.")
        if options["lambda_min"] is not None and options["lambda_max"] is not None:
            try:
                achromatic = AchromaticDesign(
                    lambda_min_nm=um_to_nm(self.length(options, "lambda_min")),
                    lambda_max_nm=um_to_nm(self.length(options, "lambda_max")),
                    delta_rad=options["delta"],
                )
            except ValidationError as exc:
                self.fail(f"invalid achromatic band: {exc.errors()[0]['msg']}")

        inputs = {}
        lut = None
        if options["lut"] is not None:
            inputs["lut"] = self.input_file(options, "lut")
            try:
                lut = load_meta_atom_lut(inputs["lut"])
            except ValidationError as exc:
                self.fail(f"--lut: invalid meta-atom library: {exc.errors()[0]['msg']}")

        try:
            design = LensDesign(
                diameter_mm=um_to_mm(diameter),
                focal_length_design_mm=um_to_mm(focal),
                wavelength_design_nm=um_to_nm(wavelength),
                phase_mode=options["phase_mode"],
                focal_scaling_mode=options["focal_scaling"],
                achromatic=achromatic,
                lut=lut,
            )
        except ValidationError as exc:
            self.fail(f"invalid lens design: {exc.errors()[0]['msg']}")

        out = self.output_path(options, "out")
        run = self.run_config(options, inputs=inputs, outputs={"out": out})
        return run, {"design": design, "out": out}

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        return run_design(**params)
