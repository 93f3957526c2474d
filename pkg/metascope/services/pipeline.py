"""
Orquestador de etapas del toolkit.

Este módulo expone una función por subcomando. Cada función recibe
parámetros ya validados, calcula todos los resultados en memoria y recién
entonces escribe los artefactos (de forma atómica), de modo que una falla
no deja salidas parciales en las rutas finales.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Sequence

from core.correct import DEFAULT_SNR, correct_pipeline
from core.degrade import (
    MANIFEST_NAME,
    DegradeConfig,
    collect_inputs,
    config_hash,
    load_dataset_manifest,
    synthesize_dataset,
)
from core.errors import ConfigurationError, DimensionError
from core.field import FieldGrid
from core.images import ImageTensor, list_pngs, read_mask, read_png, write_png
from core.lens import LensDesign, focal_length_at, lens_document
from core.metrics import DEFAULT_SSIM_WINDOW, MetricReport, evaluate_image_pairs, evaluate_label_pairs
from core.priors import (
    EtaKind,
    EtaModel,
    SpatialPrior,
    analyze_white_image,
    embedding_inputs,
    vignetting_prior,
    write_embedding_inputs,
    write_spatial_prior,
)
from core.propagate import (
    EfficiencyVector,
    Normalization,
    channel_efficiency,
    default_grid,
    focal_sweep,
    read_psf_stack,
    simulate_psf_stack,
    write_psf_stack,
)
from core.psfmodel import GaussianMixture2D, fit_psf_stack
from core.storage import atomic_directory, atomic_write_json
from core.units import nm_to_um, um_to_mm
from metascope.services.runs import StageResult

logger = logging.getLogger(__name__)

CORRECTION_REPORT_NAME: Final[str] = "correction_report.json"
DEFAULT_SWEEP_STEPS: Final[int] = 101
# Rango del barrido focal relativo a las focales extremas de la banda.
SWEEP_RANGE: Final[tuple[float, float]] = (0.5, 1.5)
WAVELENGTH_MATCH_NM: Final[float] = 0.5


def _json(model: object) -> object:
    return json.loads(model.model_dump_json(by_alias=True))  # type: ignore[attr-defined]


def run_design(*, design: LensDesign, out: Path) -> StageResult:
    """Escribe el documento de diseño de la lente."""
    atomic_write_json(out, lens_document(design))
    summary = (
        f"Lens design written to {out} (D = {design.diameter_mm:g} mm, "
        f"f = {design.focal_length_design_mm:g} mm, lambda = {design.wavelength_design_nm:g} nm, "
        f"phase mode {design.phase_mode})."
    )
    return StageResult(outputs=(out,), summary=summary)


def _sweep_document(design: LensDesign, wavelengths_nm: Sequence[float], steps: int) -> dict:
    focals = [focal_length_at(design, nm_to_um(lam)) for lam in wavelengths_nm]
    z_min = SWEEP_RANGE[0] * min(focals)
    z_max = SWEEP_RANGE[1] * max(focals)
    grid = default_grid(design, wavelength=nm_to_um(min(wavelengths_nm)))
    sweeps = [focal_sweep(design, nm_to_um(lam), z_min, z_max, steps, grid=grid) for lam in wavelengths_nm]
    return {
        "format_version": 1,
        "wavelengths_nm": list(wavelengths_nm),
        "distances_mm": [um_to_mm(float(z)) for z in sweeps[0].distances],
        "intensity": [s.intensity.tolist() for s in sweeps],
        "best_focus_mm": [um_to_mm(s.best_focus) for s in sweeps],
        "best_intensity": [s.best_intensity for s in sweeps],
    }


def run_simulate_psf(
    *,
    design: LensDesign,
    wavelengths_nm: Sequence[float],
    sensor_distance: float,
    grid: FieldGrid,
    window: int,
    sensor_pitch: float | None,
    normalization: Normalization,
    psf_out: Path,
    efficiency_out: Path | None = None,
    sweep_out: Path | None = None,
    sweep_steps: int = DEFAULT_SWEEP_STEPS,
    threads: int = 1,
) -> StageResult:
    """
    Simula el PSFStack y, opcionalmente, el vector de eficiencia y el barrido focal.

    Todas las salidas se calculan antes de escribir la primera.
    """
    stack = simulate_psf_stack(
        design,
        wavelengths_nm,
        sensor_distance,
        grid,
        window=window,
        sensor_pitch=sensor_pitch,
        normalization=normalization,
        threads=threads,
    )
    efficiency = None
    if efficiency_out is not None:
        efficiency = channel_efficiency(
            design,
            wavelengths_nm,
            sensor_distance,
            grid,
            window=window,
            sensor_pitch=sensor_pitch,
            threads=threads,
        )
    sweep = _sweep_document(design, wavelengths_nm, sweep_steps) if sweep_out is not None else None

    outputs = [write_psf_stack(psf_out, stack)]
    if efficiency is not None and efficiency_out is not None:
        outputs.append(atomic_write_json(efficiency_out, _json(efficiency)))
    if sweep is not None and sweep_out is not None:
        outputs.append(atomic_write_json(sweep_out, sweep))

    summary = (
        f"PSF stack with {len(stack.wavelengths_nm)} wavelengths "
        f"({stack.psfs.shape[1]}x{stack.psfs.shape[2]}, pitch {stack.pitch:g} um) written to {psf_out}."
    )
    return StageResult(outputs=tuple(outputs), summary=summary)


def _write_prior_outputs(
    prior: SpatialPrior,
    *,
    out: Path,
    embedding_out: Path | None,
    efficiency: EfficiencyVector,
) -> list[Path]:
    outputs = [write_spatial_prior(out, prior)]
    if embedding_out is not None:
        outputs.append(write_embedding_inputs(embedding_out, embedding_inputs(efficiency, prior)))
    return outputs


def run_priors_white(
    *,
    image_path: Path,
    focal_length: float,
    pixel_pitch: float,
    eta_kind: EtaKind,
    shared: bool,
    out: Path,
    efficiency: EfficiencyVector,
    analysis_out: Path | None = None,
    embedding_out: Path | None = None,
    threads: int = 1,
) -> StageResult:
    """Extrae el prior espacial (y el análisis) de una imagen blanca."""
    image = read_png(image_path)
    analysis = analyze_white_image(
        image.values, focal_length=focal_length, pixel_pitch=pixel_pitch, kind=eta_kind, threads=threads
    )
    prior = vignetting_prior(image.width, image.height, focal_length, pixel_pitch, analysis.models, center=analysis.center)
    if shared and not prior.shared:
        prior = SpatialPrior(
            maps=prior.maps.mean(axis=0), center=prior.center, focal_length=focal_length, pixel_pitch=pixel_pitch
        )

    document = None
    if analysis_out is not None:
        means = analysis.channel_means
        reference = means[1] if len(means) == 3 else means[0]
        document = {
            "format_version": 1,
            "center_px": list(analysis.center),
            "channel_means": list(means),
            "wb_gains": [reference / m if m > 0 else None for m in means],
            "theta_rad": analysis.theta.tolist(),
            "profiles": analysis.profiles.tolist(),
            "models": [_json(model) for model in analysis.models],
            "warnings": list(analysis.warnings),
        }

    outputs = _write_prior_outputs(prior, out=out, embedding_out=embedding_out, efficiency=efficiency)
    if document is not None and analysis_out is not None:
        outputs.append(atomic_write_json(analysis_out, document))
    summary = (
        f"Spatial prior {prior.maps.shape[0]}x{prior.shape[0]}x{prior.shape[1]} from white image, "
        f"center ({analysis.center[0]:.2f}, {analysis.center[1]:.2f}) px, written to {out}."
    )
    return StageResult(outputs=tuple(outputs), summary=summary)


def run_priors_synthetic(
    *,
    width: int,
    height: int,
    focal_length: float,
    pixel_pitch: float,
    etas: Sequence[EtaModel],
    out: Path,
    efficiency: EfficiencyVector,
    embedding_out: Path | None = None,
) -> StageResult:
    """Genera un prior espacial sintético eta(theta) * cos^4(theta)."""
    prior = vignetting_prior(width, height, focal_length, pixel_pitch, etas)
    outputs = _write_prior_outputs(prior, out=out, embedding_out=embedding_out, efficiency=efficiency)
    corner = float(min(prior.channel(i)[0, 0] for i in range(prior.maps.shape[0])))
    summary = f"Synthetic spatial prior {width}x{height} written to {out} (corner attenuation {corner:.4f})."
    return StageResult(outputs=tuple(outputs), summary=summary)


def run_fit_gmm(
    *,
    psf_path: Path,
    k: int,
    tol: float,
    max_iter: int,
    seed: int,
    out: Path,
    threads: int = 1,
) -> StageResult:
    """Ajusta una mezcla por longitud de onda del PSFStack."""
    stack = read_psf_stack(psf_path)
    results = fit_psf_stack(stack, k, tol=tol, max_iter=max_iter, seed=seed, threads=threads)
    for result in results:
        if not result.converged:
            logger.warning(
                "El EM a %.1f nm no convergio en %d iteraciones.",
                result.mixture.wavelength_nm or float("nan"),
                result.iterations,
            )
    document = {
        "format_version": 1,
        "mixtures": [_json(r.mixture) for r in results],
        "fits": [
            {
                "wavelength_nm": r.mixture.wavelength_nm,
                "iterations": r.iterations,
                "converged": r.converged,
                "final_log_likelihood": r.log_likelihood[-1] if r.log_likelihood else None,
                "warnings": list(r.warnings),
                "reseeded_at": list(r.reseeded_at),
            }
            for r in results
        ],
    }
    atomic_write_json(out, document)
    summary = f"Fitted {len(results)} mixtures with K = {k} to {psf_path}; written to {out}."
    return StageResult(outputs=(out,), summary=summary)


def run_degrade(
    *,
    source: Path,
    design: LensDesign,
    cfg: DegradeConfig,
    out_dir: Path,
    threads: int = 1,
) -> StageResult:
    """Sintetiza el dataset pareado en out_dir."""
    inputs = collect_inputs(source)
    if not inputs:
        raise ConfigurationError(f"No se encontraron imagenes PNG en {source}.")
    manifest = synthesize_dataset(inputs, design, cfg, out_dir, threads=threads)
    failed = len(manifest.entries) - len(manifest.ok_entries)
    summary = f"Dataset with {len(manifest.ok_entries)} pairs written to {out_dir}"
    summary += f" ({failed} inputs failed)." if failed else "."
    return StageResult(outputs=(out_dir,), summary=summary, extra_hashes={"degrade_config": manifest.config_hash})


def select_channel_mixtures(
    mixtures: Sequence[GaussianMixture2D],
    channel_wavelengths_nm: Sequence[float],
) -> tuple[GaussianMixture2D, ...]:
    """
    Elige una mezcla por canal según su longitud de onda.

    Sin longitudes de onda registradas se aceptan exactamente tres mezclas
    en orden (R, G, B).

    Raises:
        ConfigurationError: Si algún canal no tiene mezcla.
    """
    if all(m.wavelength_nm is None for m in mixtures):
        if len(mixtures) != len(channel_wavelengths_nm):
            raise ConfigurationError(
                f"Se esperaban {len(channel_wavelengths_nm)} mezclas sin longitud de onda, recibido {len(mixtures)}."
            )
        return tuple(mixtures)
    chosen = []
    for lam in channel_wavelengths_nm:
        match = next(
            (m for m in mixtures if m.wavelength_nm is not None and abs(m.wavelength_nm - lam) <= WAVELENGTH_MATCH_NM),
            None,
        )
        if match is None:
            raise ConfigurationError(f"No hay mezcla para el canal de {lam:g} nm.")
        chosen.append(match)
    return tuple(chosen)


@dataclass(frozen=True)
class CorrectionInput:
    name: str
    degraded: Path
    reference: Path | None = None


def collect_correction_inputs(source: Path) -> list[CorrectionInput]:
    """Dataset con manifest.json, directorio de PNG o un único PNG."""
    if source.is_file():
        return [CorrectionInput(source.name, source)]
    if (source / MANIFEST_NAME).is_file():
        manifest = load_dataset_manifest(source / MANIFEST_NAME)
        return [
            CorrectionInput(
                entry.name,
                source / str(entry.degraded_path),
                source / entry.clean_path if entry.clean_path else None,
            )
            for entry in manifest.ok_entries
        ]
    return [CorrectionInput(p.name, p) for p in list_pngs(source)]


def run_correct(
    *,
    source: Path,
    cfg: DegradeConfig,
    mixtures: Sequence[GaussianMixture2D],
    out_dir: Path,
    snr: float = DEFAULT_SNR,
    use_occ: bool = True,
    m: int = 3,
    threads: int = 1,
) -> StageResult:
    """Corrige cada imagen y escribe las salidas y el reporte por etapa."""
    items = collect_correction_inputs(source)
    if not items:
        raise ConfigurationError(f"No se encontraron imagenes para corregir en {source}.")
    channel_mixtures = select_channel_mixtures(mixtures, cfg.channel_wavelengths_nm)

    reports = []
    with atomic_directory(out_dir) as staging:
        for item in items:
            degraded = read_png(item.degraded)
            reference = read_png(item.reference) if item.reference is not None else None
            result = correct_pipeline(
                degraded, cfg, channel_mixtures, snr, reference=reference, use_occ=use_occ, m=m, threads=threads
            )
            write_png(staging / item.name, result.image)
            reports.append({"name": item.name, "report": _json(result.report)})
            logger.info("Imagen %s corregida.", item.name)
        atomic_write_json(
            staging / CORRECTION_REPORT_NAME,
            {"format_version": 1, "config_hash": config_hash(cfg), "images": reports},
        )

    summary = f"Corrected {len(items)} images into {out_dir} (snr {snr:g}, occ {'on' if use_occ else 'off'})."
    return StageResult(outputs=(out_dir,), summary=summary)


def _reference_images(gt: Path) -> dict[str, Path]:
    if (gt / MANIFEST_NAME).is_file():
        manifest = load_dataset_manifest(gt / MANIFEST_NAME)
        return {e.name: gt / str(e.clean_path) for e in manifest.ok_entries if e.clean_path}
    return {p.name: p for p in list_pngs(gt)}


def _mask_pairs(masks: Path, gt: Path) -> list[tuple[str, Path, Path]]:
    predicted = {p.name: p for p in list_pngs(masks / "pred")} if (masks / "pred").is_dir() else {}
    if (masks / "gt").is_dir():
        truth = {p.name: p for p in list_pngs(masks / "gt")}
    else:
        manifest = load_dataset_manifest(gt / MANIFEST_NAME) if (gt / MANIFEST_NAME).is_file() else None
        if manifest is None:
            raise ConfigurationError(f"{masks} no tiene gt/ y {gt} no es un dataset con mascaras.")
        truth = {e.name: gt / e.mask_path for e in manifest.ok_entries if e.mask_path}
    missing = sorted(set(predicted) - set(truth))
    if missing:
        raise ConfigurationError(f"Mascaras sin referencia: {', '.join(missing)}.")
    return [(name, predicted[name], truth[name]) for name in sorted(predicted)]


def run_evaluate(
    *,
    pred: Path,
    gt: Path,
    report: Path,
    masks: Path | None = None,
    num_classes: int | None = None,
    window: int = DEFAULT_SSIM_WINDOW,
    threads: int = 1,
) -> StageResult:
    """
    PSNR/SSIM entre predicciones y referencias (en espacio de visualización)
    y, con máscaras, IoU/Dice sobre la matriz de confusión acumulada.
    """
    references = _reference_images(gt)
    predictions = list_pngs(pred)
    missing = sorted(p.name for p in predictions if p.name not in references)
    if missing:
        raise ConfigurationError(f"Predicciones sin referencia: {', '.join(missing)}.")
    if not predictions:
        raise ConfigurationError(f"No hay imagenes PNG en {pred}.")

    pairs: list[tuple[str, ImageTensor, ImageTensor]] = []
    for path in predictions:
        a = read_png(path, linearize=False)
        b = read_png(references[path.name], linearize=False)
        if a.values.shape != b.values.shape:
            raise DimensionError(f"{path.name}: forma {a.values.shape} distinta de la referencia {b.values.shape}.")
        pairs.append((path.name, a, b))
    scores = evaluate_image_pairs(pairs, window=window, threads=threads)

    segmentation = None
    if masks is not None:
        labels = [(read_mask(p), read_mask(t)) for _, p, t in _mask_pairs(masks, gt)]
        if labels:
            classes = num_classes or int(max(max(p.max(), t.max()) for p, t in labels)) + 1
            segmentation = evaluate_label_pairs(labels, classes, threads=threads)

    result = MetricReport(
        pairs=scores.pairs,
        psnr_db=scores.psnr_db,
        ssim=scores.ssim,
        images=scores.images,
        segmentation=segmentation,
    )
    atomic_write_json(report, _json(result))
    summary = f"Evaluated {result.pairs} pairs: PSNR {result.psnr_db:.4f} dB, SSIM {result.ssim:.4f}."
    if segmentation is not None and segmentation.mean_iou is not None:
        summary += f" mIoU {segmentation.mean_iou:.4f}."
    return StageResult(outputs=(report,), summary=summary)


def efficiency_from(path: Path | None, default: EfficiencyVector) -> EfficiencyVector:
    if path is None:
        return default
    return EfficiencyVector.model_validate_json(path.read_text(encoding="utf-8"))