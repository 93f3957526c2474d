"""Subcomando priors: prior espacial desde una imagen blanca o sintético."""

from __future__ import annotations

from typing import Any

from django.conf import settings
from django.core.management.base import CommandParser
from pydantic import ValidationError

from core.priors import EtaModel, load_eta_model
from core.propagate import TABLE_EFFICIENCY, EfficiencyVector
from metascope.management.commands._base import MetascopeCommand
from metascope.services.pipeline import efficiency_from, run_priors_synthetic, run_priors_white
from metascope.services.runs import RunConfig, StageResult
from metascope.utils.validators import parse_size, validate_document, validate_size


class Command(MetascopeCommand):
    help = "Extract a spatial attenuation prior from a white image, or synthesize one from an eta model."
    subcommand = "priors"

    def add_stage_arguments(self, parser: CommandParser) -> None:
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--white-image", default=None, help="Linear-light capture of a uniform white target (PNG).")
        source.add_argument("--synthetic", default=None, help="Synthesize a WIDTHxHEIGHT prior from an eta model.")
        parser.add_argument("--focal", required=True, help="Focal length with unit, e.g. 10mm.")
        parser.add_argument("--pixel-pitch", default=None, help="Sensor pixel pitch with unit (default METASCOPE_SENSOR_PITCH_UM).")
        parser.add_argument(
            "--eta-kind",
            choices=("cosine-power", "polynomial", "tabulated-radial"),
            default="cosine-power",
            help="Eta model family to fit (white image) or to build (synthetic).",
        )
        parser.add_argument("--eta-param", default=None, help="Comma list of eta parameters (synthetic).")
        parser.add_argument("--eta", default=None, help="Eta model JSON (synthetic; overrides --eta-kind).")
        parser.add_argument("--shared", action="store_true", help="Store a single map shared by all channels.")
        parser.add_argument("--efficiency", default=None, help="Efficiency vector JSON for --embedding-out.")
        parser.add_argument("--out", required=True, help="Output spatial prior raster.")
        parser.add_argument("--analysis-out", default=None, help="White-image analysis JSON.")
        parser.add_argument("--embedding-out", default=None, help="Embedding inputs raster (T; Y, Cx, Cy).")

    def _eta(self, options: dict[str, Any]) -> EtaModel:
        if options["eta"] is not None:
            path = self.input_file(options, "eta")
            self.check(validate_document(path, EtaModel, name="--eta"))
            return load_eta_model(path)
        if options["eta_kind"] == "tabulated-radial":
            self.fail("--eta-kind tabulated-radial needs an --eta document for synthetic priors.")
        text = options["eta_param"] or "0"
        try:
            parameters = tuple(float(v) for v in text.split(",") if v.strip())
        except ValueError:
            self.fail(f"--eta-param must be a comma list of numbers (got {text!r}).")
        try:
            return EtaModel(kind=options["eta_kind"], parameters=parameters)
        except ValidationError as exc:
            self.fail(f"invalid eta model: {exc.errors()[0]['msg']}")

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        focal = self.length(options, "focal")
        pitch = self.optional_length(options, "pixel_pitch", settings.METASCOPE_SENSOR_PITCH_UM)

        inputs = {}
        efficiency: EfficiencyVector = TABLE_EFFICIENCY
        if options["efficiency"] is not None:
            inputs["efficiency"] = self.input_file(options, "efficiency")
            self.check(validate_document(inputs["efficiency"], EfficiencyVector, name="--efficiency"))
            efficiency = efficiency_from(inputs["efficiency"], TABLE_EFFICIENCY)

        out = self.output_path(options, "out")
        embedding_out = self.output_path(options, "embedding_out")
        params: dict[str, Any] = {
            "focal_length": focal,
            "pixel_pitch": pitch,
            "out": out,
            "efficiency": efficiency,
            "embedding_out": embedding_out,
        }
        outputs = {"out": out, "embedding_out": embedding_out}

        if options["white_image"] is not None:
            inputs["white_image"] = self.input_file(options, "white_image")
            analysis_out = self.output_path(options, "analysis_out")
            outputs["analysis_out"] = analysis_out
            params.update(
                image_path=inputs["white_image"],
                eta_kind=options["eta_kind"],
                shared=options["shared"],
                analysis_out=analysis_out,
            )
        else:
            if options["analysis_out"] is not None:
                self.fail("--analysis-out is only available with --white-image.")
            self.check(validate_size(options["synthetic"], name="--synthetic"))
            width, height = parse_size(options["synthetic"])
            eta = self._eta(options)
            etas = (eta,) if options["shared"] else (eta, eta, eta)
            params.update(width=width, height=height, etas=etas)

        run = self.run_config(options, inputs=inputs, outputs=outputs)
        return run, params

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        if "image_path" in params:
            return run_priors_white(threads=run.threads, **params)
        return run_priors_synthetic(**params)
