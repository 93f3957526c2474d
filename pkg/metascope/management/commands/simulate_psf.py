"""Subcomando simulate-psf: PSFStack por longitud de onda en el plano del sensor."""

from __future__ import annotations

from typing import Any

from django.conf import settings
from django.core.management.base import CommandParser

from core.field import FieldGrid
from core.lens import LensDesign
from core.units import um_to_nm
from metascope.management.commands._base import MetascopeCommand
from metascope.services.pipeline import DEFAULT_SWEEP_STEPS, run_simulate_psf
from metascope.services.runs import RunConfig, StageResult
from metascope.utils.validators import validate_document, validate_positive_int


class Command(MetascopeCommand):
    help = "Simulate per-wavelength PSFs of a lens design at a sensor distance."
    subcommand = "simulate-psf"

    def add_stage_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--lens", required=True, help="Lens design JSON.")
        parser.add_argument("--wavelengths", required=True, help="Comma list, nm when no unit: 650,532,450.")
        parser.add_argument("--sensor", required=True, help="Lens-to-sensor distance with unit, e.g. 10mm.")
        parser.add_argument("--grid", default=None, help="Lens-plane samples per side (default METASCOPE_GRID_SAMPLES).")
        parser.add_argument("--pitch", default=None, help="Lens-plane pitch with unit (default METASCOPE_GRID_PITCH_UM).")
        parser.add_argument(
            "--sensor-pitch",
            default=None,
            help="Sensor sampling pitch with unit (default METASCOPE_SENSOR_PITCH_UM).",
        )
        parser.add_argument(
            "--on-grid",
            action="store_true",
            help="Sample the PSF on the lens grid (transfer-function path) instead of the sensor pitch.",
        )
        parser.add_argument("--window", default=None, help="PSF window side in samples (default METASCOPE_PSF_WINDOW).")
        parser.add_argument("--normalization", choices=("unit-sum", "peak-one", "raw"), default="unit-sum")
        parser.add_argument("--psf-out", required=True, help="Output PSF stack raster.")
        parser.add_argument("--efficiency-out", default=None, help="Optional efficiency vector JSON.")
        parser.add_argument("--sweep-out", default=None, help="Optional on-axis focal sweep JSON.")
        parser.add_argument("--sweep-steps", default=str(DEFAULT_SWEEP_STEPS), help="Focal sweep samples.")

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        lens_path = self.input_file(options, "lens")
        self.check(validate_document(lens_path, LensDesign, name="--lens"))
        wavelengths = self.lengths(options, "wavelengths", default_unit="nm")
        sensor = self.length(options, "sensor")

        samples = options["grid"] or settings.METASCOPE_GRID_SAMPLES
        window = options["window"] or settings.METASCOPE_PSF_WINDOW
        self.check(
            validate_positive_int(samples, name="--grid"),
            validate_positive_int(window, name="--window"),
            validate_positive_int(options["sweep_steps"], name="--sweep-steps"),
        )
        pitch = self.optional_length(options, "pitch", settings.METASCOPE_GRID_PITCH_UM)
        sensor_pitch = None
        if not options["on_grid"]:
            sensor_pitch = self.optional_length(options, "sensor_pitch", settings.METASCOPE_SENSOR_PITCH_UM)

        try:
            grid = FieldGrid.square(int(samples), float(pitch))
        except ValueError as exc:
            self.fail(f"invalid grid: {exc}")

        outputs = {
            "psf_out": self.output_path(options, "psf_out"),
            "efficiency_out": self.output_path(options, "efficiency_out"),
            "sweep_out": self.output_path(options, "sweep_out"),
        }
        run = self.run_config(options, inputs={"lens": lens_path}, outputs=outputs)
        return run, {
            "lens_path": lens_path,
            "wavelengths_nm": tuple(um_to_nm(w) for w in wavelengths),
            "sensor_distance": sensor,
            "grid": grid,
            "window": int(window),
            "sensor_pitch": sensor_pitch,
            "normalization": options["normalization"],
            "sweep_steps": int(options["sweep_steps"]),
            **outputs,
        }

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        design = LensDesign.model_validate_json(params.pop("lens_path").read_text(encoding="utf-8"))
        return run_simulate_psf(design=design, threads=run.threads, **params)
