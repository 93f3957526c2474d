"""
Modulo de metricas de calidad de imagen, segmentacion y objetivos de perdida.

Responsabilidades:
- PSNR y SSIM sobre rango unitario
- IoU/Dice por clase a partir de la matriz de confusion
- Perdida de destilacion ponderada por mapa de gradiente y objetivo total
- Evaluacion por lotes con reduccion en orden determinista (MetricReport)

Nota: PSNR de imagenes identicas se reporta como +inf; los reportes JSON
lo serializan como Infinity.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Final, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from skimage.metrics import structural_similarity

from core.errors import DimensionError, InvalidArgumentError
from core.parallel import parallel_map

logger = logging.getLogger(__name__)

DEFAULT_SSIM_WINDOW: Final[int] = 11
SSIM_SIGMA: Final[float] = 1.5


def _as_array(image: object) -> np.ndarray:
    values = getattr(image, "values", image)
    return np.asarray(values, dtype=np.float64)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"Las formas no coinciden: {a.shape} vs {b.shape}.")


def psnr(a: object, b: object) -> float:
    """10 * log10(1 / MSE) sobre rango unitario; +inf si MSE = 0."""
    x, y = _as_array(a), _as_array(b)
    _same_shape(x, y)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: object, b: object, window: int = DEFAULT_SSIM_WINDOW) -> float:
    """
    SSIM medio con ponderacion gaussiana (sigma 1.5), C1 = 0.01^2 y C2 = 0.03^2.

    Acepta (H, W) o (C, H, W); el resultado es el promedio sobre canales.

    Raises:
        DimensionError: Si las formas difieren o la ventana excede la imagen.
    """
    x, y = _as_array(a), _as_array(b)
    _same_shape(x, y)
    if window < 3 or window % 2 == 0:
        raise InvalidArgumentError(f"La ventana SSIM debe ser impar y >= 3 (recibido {window}).")
    spatial = x.shape[-2:]
    if min(spatial) < window:
        raise DimensionError(f"La ventana {window} excede la imagen {spatial}.")
    return float(
        structural_similarity(
            x,
            y,
            win_size=window,
            gaussian_weights=True,
            sigma=SSIM_SIGMA,
            use_sample_covariance=False,
            data_range=1.0,
            K1=0.01,
            K2=0.03,
            channel_axis=0 if x.ndim == 3 else None,
        )
    )


@dataclass(frozen=True)
class SegScores:
    """IoU/Dice por clase (None si la clase no aparece en ninguna mascara)."""

    iou: tuple[float | None, ...]
    dice: tuple[float | None, ...]
    mean_iou: float | None
    mean_dice: float | None


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """Matriz (pred, gt) de conteos."""
    p = np.asarray(pred)
    g = np.asarray(gt)
    _same_shape(p, g)
    if num_classes < 1:
        raise InvalidArgumentError(f"num_classes debe ser >= 1 (recibido {num_classes}).")
    for name, labels in (("pred", p), ("gt", g)):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise InvalidArgumentError(f"Etiqueta fuera de rango en {name}: se esperaba [0, {num_classes}).")
    flat = p.astype(np.int64).ravel() * num_classes + g.astype(np.int64).ravel()
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def scores_from_confusion(confusion: np.ndarray) -> SegScores:
    inter = np.diag(confusion).astype(np.float64)
    pred_area = confusion.sum(axis=1).astype(np.float64)
    gt_area = confusion.sum(axis=0).astype(np.float64)
    union = pred_area + gt_area - inter

    iou: list[float | None] = []
    dice: list[float | None] = []
    for c in range(confusion.shape[0]):
        if pred_area[c] + gt_area[c] == 0:
            iou.append(None)
            dice.append(None)
            continue
        iou.append(float(inter[c] / union[c]))
        dice.append(float(2.0 * inter[c] / (pred_area[c] + gt_area[c])))

    present_iou = [v for v in iou if v is not None]
    present_dice = [v for v in dice if v is not None]
    return SegScores(
        iou=tuple(iou),
        dice=tuple(dice),
        mean_iou=math.fsum(present_iou) / len(present_iou) if present_iou else None,
        mean_dice=math.fsum(present_dice) / len(present_dice) if present_dice else None,
    )


def seg_scores(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> SegScores:
    """IoU = |inter|/|union|, Dice = 2|inter|/(|pred|+|gt|) por clase; medias sobre clases presentes."""
    return scores_from_confusion(confusion_matrix(pred, gt, num_classes))


def normalize_gradient_map(grad_map: np.ndarray) -> np.ndarray:
    """(M - min M) / (max M - min M); un mapa constante se sustituye por unos."""
    m = np.asarray(grad_map, dtype=np.float64)
    low, high = float(m.min()), float(m.max())
    if high == low:
        return np.ones_like(m)
    return (m - low) / (high - low)


def distill_loss(grad_map: np.ndarray, teacher: np.ndarray, student: np.ndarray) -> float:
    """
    (1 / sum M~) * sum M~ * |teacher - student|, con M~ difundido a la forma de la diferencia.
    """
    t = np.asarray(teacher, dtype=np.float64)
    s = np.asarray(student, dtype=np.float64)
    try:
        diff = np.abs(t - s)
        weights = np.broadcast_to(normalize_gradient_map(grad_map), diff.shape)
    except ValueError as exc:
        raise DimensionError(f"Formas incompatibles para la destilacion: {exc}") from exc
    return float(np.sum(weights * diff) / np.sum(weights))


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    restoration: float = Field(default=0.1, ge=0, alias="lambda")
    omega_d: float = Field(default=1.0, ge=0)
    omega_k: float = Field(default=1.0, ge=0)


def total_objective(l_seg: float, l_rest: float, l_distill: float, l_kl: float, weights: LossWeights) -> float:
    """l_seg + lambda * l_rest + omega_d * l_distill + omega_k * l_kl."""
    terms = (l_seg, l_rest, l_distill, l_kl)
    if not all(math.isfinite(v) for v in terms):
        raise InvalidArgumentError("Los terminos de perdida deben ser finitos.")
    return l_seg + weights.restoration * l_rest + weights.omega_d * l_distill + weights.omega_k * l_kl


class ImagePairScore(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    name: str
    psnr_db: float
    ssim: float


class SegmentationSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_classes: int
    iou: tuple[float | None, ...]
    dice: tuple[float | None, ...]
    mean_iou: float | None
    mean_dice: float | None
    pairs: int


class MetricReport(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    format_version: int = 1
    pairs: int
    psnr_db: float | None = None
    ssim: float | None = None
    images: tuple[ImagePairScore, ...] = ()
    segmentation: SegmentationSummary | None = None


def evaluate_image_pairs(
    pairs: Sequence[tuple[str, object, object]],
    *,
    window: int = DEFAULT_SSIM_WINDOW,
    threads: int = 1,
) -> MetricReport:
    """PSNR/SSIM por par (nombre, prediccion, referencia) y medias en orden de entrada."""

    def _score(item: tuple[str, object, object]) -> ImagePairScore:
        name, pred, gt = item
        return ImagePairScore(name=name, psnr_db=psnr(pred, gt), ssim=ssim(pred, gt, window))

    scores = parallel_map(_score, list(pairs), threads=threads)
    if not scores:
        return MetricReport(pairs=0)
    return MetricReport(
        pairs=len(scores),
        psnr_db=math.fsum(s.psnr_db for s in scores) / len(scores),
        ssim=math.fsum(s.ssim for s in scores) / len(scores),
        images=tuple(scores),
    )


def evaluate_label_pairs(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    num_classes: int,
    *,
    threads: int = 1,
) -> SegmentationSummary:
    """IoU/Dice sobre la matriz de confusion acumulada de todos los pares."""
    matrices = parallel_map(lambda item: confusion_matrix(item[0], item[1], num_classes), list(pairs), threads=threads)
    total = np.zeros((num_classes, num_classes), dtype=np.int64)
    for matrix in matrices:
        total += matrix
    scores = scores_from_confusion(total)
    return SegmentationSummary(
        num_classes=num_classes,
        iou=scores.iou,
        dice=scores.dice,
        mean_iou=scores.mean_iou,
        mean_dice=scores.mean_dice,
        pairs=len(matrices),
    )
