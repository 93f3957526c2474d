"""Subcomando degrade: sintetiza un dataset pareado con el modelo de degradación."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

from django.core.management.base import CommandParser

from core.degrade import DegradeConfigDocument, load_degrade_config
from core.lens import LensDesign, load_lens_design
from metascope.management.commands._base import MetascopeCommand
from metascope.services.pipeline import run_degrade
from metascope.services.runs import RunConfig, StageResult
from metascope.utils.validators import validate_document, validate_input_path


class Command(MetascopeCommand):
    help = "Degrade clean images through the metalens forward model into a paired dataset."
    subcommand = "degrade"

    def add_stage_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--in", dest="source", required=True, help="PNG directory (masks in masks/) or inputs JSON.")
        parser.add_argument("--lens", required=True, help="Lens design JSON recorded in the manifest.")
        parser.add_argument("--config", required=True, help="Degrade configuration JSON.")
        parser.add_argument("--out", required=True, help="Output dataset directory.")

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        source = Path(options["source"])
        self.check(validate_input_path(source, name="--in"))
        lens = self.input_file(options, "lens")
        config = self.input_file(options, "config")
        self.check(
            validate_document(lens, LensDesign, name="--lens"),
            validate_document(config, DegradeConfigDocument, name="--config"),
        )
        try:
            cfg = load_degrade_config(config)
        except ValueError as exc:
            self.fail(f"--config: {exc}")
        if options["seed"] is not None:
            cfg = dataclasses.replace(cfg, seed=int(options["seed"]))

        out = self.output_path(options, "out", directory=True)
        run = self.run_config(
            options,
            inputs={"in": source, "lens": lens, "config": config},
            outputs={"out": out},
            seed=cfg.seed,
        )
        return run, {"source": source, "design": load_lens_design(lens), "cfg": cfg, "out_dir": out}

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        return run_degrade(threads=run.threads, **params)
