"""Subcomando evaluate: PSNR/SSIM y, con máscaras, IoU/Dice en un MetricReport."""

from __future__ import annotations

from pathlib import Path
from typing import Any

from django.core.management.base import CommandParser

from core.metrics import DEFAULT_SSIM_WINDOW
from metascope.management.commands._base import MetascopeCommand
from metascope.services.pipeline import run_evaluate
from metascope.services.runs import RunConfig, StageResult
from metascope.utils.validators import validate_input_dir, validate_positive_int


class Command(MetascopeCommand):
    help = "Score predicted images (and label masks) against references into a metric report."
    subcommand = "evaluate"

    def add_stage_arguments(self, parser: CommandParser) -> None:
        parser.add_argument("--pred", required=True, help="Directory of predicted PNGs.")
        parser.add_argument("--gt", required=True, help="Directory of reference PNGs or a degrade dataset.")
        parser.add_argument("--masks", default=None, help="Directory with pred/ (and optionally gt/) label masks.")
        parser.add_argument("--num-classes", default=None, help="Number of label classes (default: max label + 1).")
        parser.add_argument("--window", default=str(DEFAULT_SSIM_WINDOW), help="SSIM window side (odd).")
        parser.add_argument("--report", required=True, help="Output metric report JSON.")

    def prepare(self, options: dict[str, Any]) -> tuple[RunConfig, dict[str, Any]]:
        pred = Path(options["pred"])
        gt = Path(options["gt"])
        self.check(validate_input_dir(pred, name="--pred"), validate_input_dir(gt, name="--gt"))
        self.check(validate_positive_int(options["window"], name="--window"))
        inputs = {"pred": pred, "gt": gt}
        masks = None
        if options["masks"] is not None:
            masks = Path(options["masks"])
            self.check(validate_input_dir(masks, name="--masks"))
            inputs["masks"] = masks
        num_classes = None
        if options["num_classes"] is not None:
            self.check(validate_positive_int(options["num_classes"], name="--num-classes"))
            num_classes = int(options["num_classes"])

        report = self.output_path(options, "report")
        run = self.run_config(options, inputs=inputs, outputs={"report": report})
        return run, {
            "pred": pred,
            "gt": gt,
            "report": report,
            "masks": masks,
            "num_classes": num_classes,
            "window": int(options["window"]),
        }

    def execute_stage(self, run: RunConfig, params: dict[str, Any]) -> StageResult:
        return run_evaluate(threads=run.threads, **params)
