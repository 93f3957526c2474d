"""
Modulo de priors opticos: eficiencia por canal y atenuacion espacial.

Responsabilidades:
- Modelos de caida de eficiencia fuera de eje (EtaModel)
- Mapas de atenuacion espacial Y = eta(theta) * cos^4(theta) (SpatialPrior)
- Analisis de imagenes blancas: centro, perfiles radiales y ajuste de eta
- Ensamblado de entradas de embebido (T; Y, Cx, Cy)

Convenciones: theta en radianes; focal y pitch en micrometros; las
coordenadas de pixel son (x, y) = (columna, fila).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Final, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import minimize_scalar
from skimage.color import rgb2gray
from skimage.filters import threshold_otsu
from skimage.measure import label, regionprops

from core.errors import DetectionError, DimensionError, InvalidArgumentError, OutOfModelError
from core.parallel import parallel_map
from core.propagate import EfficiencyVector
from core.raster_file import read_raster, write_raster

logger = logging.getLogger(__name__)

EtaKind = Literal["cosine-power", "polynomial", "tabulated-radial"]

KIND_SPATIAL_PRIOR: Final[str] = "spatial_prior"
KIND_EMBEDDING: Final[str] = "embedding_inputs"

# Filas por bloque de acumulacion; fijo para que la suma no dependa de los hilos.
PROFILE_CHUNK_ROWS: Final[int] = 64
# Muestras para verificar monotonia de modelos no tabulados.
MONOTONE_CHECK_SAMPLES: Final[int] = 1025
COSINE_POWER_MAX: Final[float] = 64.0
DEFAULT_POLYNOMIAL_TERMS: Final[int] = 2


class EtaModel(BaseModel):
    """
    Caida de eficiencia de los nanopilares con el angulo de campo.

    - cosine-power: eta = cos(theta)^p, parameters = (p,)
    - polynomial: eta = 1 + c1*theta^2 + c2*theta^4 + ..., parameters = (c1, c2, ...)
    - tabulated-radial: interpolacion lineal de parameters sobre angles_rad
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: Literal[1] = 1
    kind: EtaKind = "cosine-power"
    parameters: tuple[float, ...] = (0.0,)
    theta_max: float = Field(default=math.pi / 2, gt=0, le=math.pi / 2)
    angles_rad: tuple[float, ...] | None = None

    @model_validator(mode="after")
    def _check_model(self) -> EtaModel:
        if self.kind == "cosine-power":
            if len(self.parameters) != 1 or self.parameters[0] < 0:
                raise ValueError("cosine-power requiere un unico exponente p >= 0.")
            return self

        if self.kind == "tabulated-radial":
            angles = self.angles_rad or ()
            if len(angles) != len(self.parameters) or len(angles) < 2:
                raise ValueError("tabulated-radial requiere angles_rad y parameters de igual longitud (>= 2).")
            if angles[0] != 0.0 or any(b <= a for a, b in zip(angles, angles[1:])):
                raise ValueError("angles_rad debe empezar en 0 y ser estrictamente creciente.")
            if self.parameters[0] != 1.0:
                raise ValueError("La tabla debe valer 1 en theta = 0.")
            if self.theta_max > angles[-1] + 1e-12:
                raise ValueError("theta_max excede el ultimo angulo tabulado.")

        theta = np.linspace(0.0, self.theta_max, MONOTONE_CHECK_SAMPLES)
        values = self._raw(theta)
        if np.any(values < -1e-12) or np.any(values > 1.0 + 1e-12):
            raise ValueError("eta debe permanecer en [0, 1] sobre [0, theta_max].")
        if np.any(np.diff(values) > 1e-12):
            raise ValueError("eta debe ser no creciente sobre [0, theta_max].")
        return self

    def _raw(self, theta: np.ndarray) -> np.ndarray:
        if self.kind == "cosine-power":
            return np.cos(theta) ** self.parameters[0]
        if self.kind == "polynomial":
            t2 = theta * theta
            out = np.ones_like(theta)
            for power, coeff in enumerate(self.parameters, start=1):
                out = out + coeff * t2**power
            return out
        return np.interp(theta, self.angles_rad, self.parameters)

    def evaluate(self, theta: np.ndarray | float) -> np.ndarray:
        """
        Evalua eta(theta).

        Raises:
            OutOfModelError: Si algun angulo excede theta_max.
        """
        theta = np.asarray(theta, dtype=np.float64)
        if np.any(theta < 0) or np.any(theta > self.theta_max + 1e-12):
            raise OutOfModelError(
                f"Angulo fuera del modelo: max {float(np.max(theta)):.6f} rad > theta_max {self.theta_max:.6f} rad."
            )
        return np.clip(self._raw(theta), 0.0, 1.0)


UNIT_ETA: Final[EtaModel] = EtaModel()


@dataclass(frozen=True)
class SpatialPrior:
    """
    Mapas de atenuacion Y, forma (C, H, W) con C = 1 (compartido) o 3.

    center es (x0, y0) en pixeles; focal_length y pixel_pitch en um.
    """

    maps: np.ndarray
    center: tuple[float, float]
    focal_length: float | None = None
    pixel_pitch: float | None = None

    def __post_init__(self) -> None:
        maps = np.array(self.maps, dtype=np.float64, copy=True)
        if maps.ndim == 2:
            maps = maps[None]
        if maps.ndim != 3 or maps.shape[0] not in (1, 3):
            raise DimensionError(f"SpatialPrior espera (C, H, W) con C en {{1, 3}}, recibido {maps.shape}.")
        if np.any(maps < 0) or np.any(maps > 1.0 + 1e-12):
            raise InvalidArgumentError("Los valores de Y deben estar en [0, 1].")
        maps.setflags(write=False)
        object.__setattr__(self, "maps", maps)

    @property
    def shared(self) -> bool:
        return self.maps.shape[0] == 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1], self.maps.shape[2]

    def channel(self, index: int) -> np.ndarray:
        return self.maps[0] if self.shared else self.maps[index]


@dataclass(frozen=True)
class WhiteImageAnalysis:
    center: tuple[float, float]
    radii: np.ndarray
    theta: np.ndarray
    profiles: np.ndarray
    channel_means: tuple[float, ...]
    row_profiles: np.ndarray
    models: tuple[EtaModel, ...]
    warnings: tuple[str, ...] = dc_field(default=())


@dataclass(frozen=True)
class EmbeddingInputs:
    channel_vector: np.ndarray
    spatial_stack: np.ndarray


def vignetting_factor(theta: np.ndarray | float, eta: EtaModel) -> np.ndarray:
    """eta(theta) * cos^4(theta)."""
    theta = np.asarray(theta, dtype=np.float64)
    return eta.evaluate(theta) * np.cos(theta) ** 4


def field_angle_map(
    width: int,
    height: int,
    focal_length: float,
    pixel_pitch: float,
    center: tuple[float, float] | None = None,
) -> np.ndarray:
    """theta(x, y) = atan(rho / f) con rho la distancia fisica al centro."""
    if width < 1 or height < 1:
        raise InvalidArgumentError(f"Dimensiones invalidas: {width}x{height}.")
    if focal_length <= 0 or pixel_pitch <= 0:
        raise InvalidArgumentError("focal_length y pixel_pitch deben ser positivos.")
    x0, y0 = center if center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
    dx = (np.arange(width) - x0) * pixel_pitch
    dy = (np.arange(height) - y0) * pixel_pitch
    rho = np.sqrt(dy[:, None] ** 2 + dx[None, :] ** 2)
    return np.arctan(rho / focal_length)


def vignetting_map(
    width: int,
    height: int,
    focal_length: float,
    pixel_pitch: float,
    eta: EtaModel,
    *,
    center: tuple[float, float] | None = None,
) -> SpatialPrior:
    """
    Mapa de atenuacion eta(theta) * cos^4(theta) normalizado a maximo 1.

    Raises:
        OutOfModelError: Si el angulo en las esquinas excede eta.theta_max.
    """
    theta = field_angle_map(width, height, focal_length, pixel_pitch, center)
    corner = float(theta.max())
    if corner > eta.theta_max + 1e-12:
        raise OutOfModelError(
            f"El angulo de campo en la esquina ({math.degrees(corner):.3f} grados) excede "
            f"theta_max ({math.degrees(eta.theta_max):.3f} grados)."
        )
    y = vignetting_factor(theta, eta)
    y = y / y.max()
    x0, y0 = center if center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
    return SpatialPrior(maps=y, center=(x0, y0), focal_length=focal_length, pixel_pitch=pixel_pitch)


def vignetting_prior(
    width: int,
    height: int,
    focal_length: float,
    pixel_pitch: float,
    etas: Sequence[EtaModel],
    *,
    center: tuple[float, float] | None = None,
) -> SpatialPrior:
    """Prior por canal (un EtaModel por canal) o compartido (uno solo)."""
    if len(etas) not in (1, 3):
        raise InvalidArgumentError(f"Se esperan 1 o 3 modelos eta, recibido {len(etas)}.")
    maps = [vignetting_map(width, height, focal_length, pixel_pitch, eta, center=center) for eta in etas]
    return SpatialPrior(
        maps=np.stack([m.maps[0] for m in maps]),
        center=maps[0].center,
        focal_length=focal_length,
        pixel_pitch=pixel_pitch,
    )


def _as_channels(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None]
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        return arr
    if arr.ndim == 3 and arr.shape[-1] in (1, 3):
        return np.moveaxis(arr, -1, 0)
    raise DimensionError(f"Imagen con forma no soportada: {arr.shape}.")


def _detect_center(channels: np.ndarray) -> tuple[np.ndarray, tuple[float, float]]:
    luminance = rgb2gray(np.moveaxis(channels, 0, -1)) if channels.shape[0] == 3 else channels[0]
    if float(luminance.max()) <= float(luminance.min()):
        raise DetectionError("La imagen es uniforme; no hay region expuesta que detectar.")
    threshold = threshold_otsu(luminance)
    labels = label(luminance > threshold)
    regions = regionprops(labels)
    if not regions:
        raise DetectionError("No se encontro una region circular expuesta.")
    largest = max(regions, key=lambda region: (region.area, -region.label))
    row, col = largest.centroid
    return labels == largest.label, (float(col), float(row))


def _radial_sums(
    channels: np.ndarray, mask: np.ndarray, center: tuple[float, float], threads: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Acumula por anillos de 1 px: conteos, suma de rho^2 y suma por canal."""
    c, h, w = channels.shape
    x0, y0 = center
    xs = np.arange(w) - x0
    max_bin = int(math.floor(math.hypot(max(x0, w - 1 - x0), max(y0, h - 1 - y0)))) + 1

    def _chunk(start: int) -> np.ndarray:
        stop = min(start + PROFILE_CHUNK_ROWS, h)
        ys = np.arange(start, stop) - y0
        rho2 = ys[:, None] ** 2 + xs[None, :] ** 2
        inside = mask[start:stop]
        bins = np.floor(np.sqrt(rho2[inside])).astype(np.int64)
        partial = np.empty((c + 2, max_bin), dtype=np.float64)
        partial[0] = np.bincount(bins, minlength=max_bin)[:max_bin]
        partial[1] = np.bincount(bins, weights=rho2[inside], minlength=max_bin)[:max_bin]
        for ch in range(c):
            partial[2 + ch] = np.bincount(bins, weights=channels[ch, start:stop][inside], minlength=max_bin)[:max_bin]
        return partial

    partials = parallel_map(_chunk, range(0, h, PROFILE_CHUNK_ROWS), threads=threads)
    total = np.zeros((c + 2, max_bin), dtype=np.float64)
    for partial in partials:
        total += partial
    return total[0], total[1], total[2:]


def _fit_cosine_power(theta: np.ndarray, g: np.ndarray) -> EtaModel:
    cos_t = np.cos(theta)

    def residual(p: float) -> float:
        basis = cos_t**p
        scale = float(basis @ g) / float(basis @ basis)
        return float(np.sum((g - scale * basis) ** 2))

    result = minimize_scalar(residual, bounds=(0.0, COSINE_POWER_MAX), method="bounded", options={"xatol": 1e-8})
    return EtaModel(kind="cosine-power", parameters=(float(result.x),))


def _fit_polynomial(theta: np.ndarray, g: np.ndarray, terms: int) -> EtaModel:
    t2 = theta * theta
    design = np.stack([t2**power for power in range(terms + 1)], axis=1)
    coeffs, *_ = np.linalg.lstsq(design, g, rcond=None)
    scale = coeffs[0]
    return EtaModel(
        kind="polynomial",
        parameters=tuple(float(c / scale) for c in coeffs[1:]),
        theta_max=float(theta.max()),
    )


def _fit_tabulated(theta: np.ndarray, g: np.ndarray) -> EtaModel:
    values = np.clip(np.minimum.accumulate(g / g[0]), 0.0, 1.0)
    angles = np.concatenate([[0.0], theta[1:]]) if theta[0] > 0 else theta
    return EtaModel(
        kind="tabulated-radial",
        parameters=(1.0,) + tuple(float(v) for v in values[1:]),
        angles_rad=tuple(float(a) for a in angles),
        theta_max=float(angles[-1]),
    )


def fit_eta(theta: np.ndarray, profile: np.ndarray, kind: EtaKind = "cosine-power") -> tuple[EtaModel, list[str]]:
    """
    Ajusta eta por minimos cuadrados tras dividir el perfil entre cos^4(theta).

    Returns:
        Tupla (modelo, advertencias).
    """
    warnings: list[str] = []
    g = np.asarray(profile, dtype=np.float64) / np.cos(theta) ** 4
    if np.any(np.diff(g) > 1e-6 * float(np.max(np.abs(g)))):
        message = "Perfil radial no monotono; el ajuste continua."
        logger.warning(message)
        warnings.append(message)
    if kind == "cosine-power":
        return _fit_cosine_power(theta, g), warnings
    if kind == "polynomial":
        try:
            return _fit_polynomial(theta, g, DEFAULT_POLYNOMIAL_TERMS), warnings
        except ValueError:
            message = "El polinomio ajustado no es monotono; se usa la tabla radial."
            logger.warning(message)
            warnings.append(message)
    return _fit_tabulated(theta, g), warnings


def analyze_white_image(
    image: np.ndarray,
    *,
    focal_length: float,
    pixel_pitch: float,
    kind: EtaKind = "cosine-power",
    threads: int = 1,
) -> WhiteImageAnalysis:
    """
    Extrae centro, perfiles radiales y modelos eta de una imagen blanca.

    Args:
        image: (H, W), (C, H, W) o (H, W, C) con C en {1, 3}, intensidad lineal.
        focal_length: Focal (um) usada para convertir radio en angulo.
        pixel_pitch: Tamano de pixel (um).
        kind: Tipo de EtaModel a ajustar por canal.
        threads: Hilos para la acumulacion radial.

    Raises:
        DetectionError: Si no hay region expuesta distinguible del fondo.
    """
    if focal_length <= 0 or pixel_pitch <= 0:
        raise InvalidArgumentError("focal_length y pixel_pitch deben ser positivos.")
    channels = _as_channels(image)
    mask, center = _detect_center(channels)
    counts, rho2_sums, sums = _radial_sums(channels, mask, center, threads)

    filled = counts > 0
    if int(filled.sum()) < 2:
        raise DetectionError("La region detectada es demasiado pequena para un perfil radial.")
    idx = np.arange(counts.size)
    last = int(np.nonzero(filled)[0].max()) + 1
    idx = idx[:last]
    filled = filled[:last]
    mean_rho2 = np.zeros(last)
    mean_rho2[filled] = rho2_sums[:last][filled] / counts[:last][filled]
    radii = np.sqrt(np.interp(idx, idx[filled], mean_rho2[filled]))

    profiles = np.empty((channels.shape[0], last), dtype=np.float64)
    for ch in range(channels.shape[0]):
        means = sums[ch, :last][filled] / counts[:last][filled]
        profiles[ch] = np.interp(idx, idx[filled], means)

    theta = np.arctan(radii * pixel_pitch / focal_length)
    models: list[EtaModel] = []
    warnings: list[str] = []
    for ch in range(channels.shape[0]):
        model, notes = fit_eta(theta, profiles[ch], kind)
        models.append(model)
        warnings.extend(f"canal {ch}: {note}" for note in notes)

    row = int(round(center[1]))
    logger.info("Centro detectado en (%.2f, %.2f) px; %d anillos.", center[0], center[1], last)
    return WhiteImageAnalysis(
        center=center,
        radii=radii,
        theta=theta,
        profiles=profiles,
        channel_means=tuple(float(channels[ch][mask].mean()) for ch in range(channels.shape[0])),
        row_profiles=channels[:, row, :].copy(),
        models=tuple(models),
        warnings=tuple(warnings),
    )


def _normalized_axis(size: int) -> np.ndarray:
    if size == 1:
        return np.zeros(1)
    return np.linspace(-1.0, 1.0, size)


def embedding_inputs(efficiency: EfficiencyVector, prior: SpatialPrior) -> EmbeddingInputs:
    """
    Entradas del embebido: T por canal y la pila espacial (Y, Cx, Cy).

    La pila admite un solo plano Y: con prior por canal se usa el promedio
    de los mapas y la diferencia entre canales queda solo en el vector T.
    Un prior compartido pasa sin cambios.
    """
    h, w = prior.shape
    y_plane = prior.maps[0] if prior.shared else prior.maps.mean(axis=0)
    cx = np.broadcast_to(_normalized_axis(w)[None, :], (h, w))
    cy = np.broadcast_to(_normalized_axis(h)[:, None], (h, w))
    return EmbeddingInputs(
        channel_vector=np.asarray(efficiency.efficiency, dtype=np.float64),
        spatial_stack=np.stack([y_plane, cx, cy]),
    )


def write_spatial_prior(path: str | Path, prior: SpatialPrior) -> Path:
    return write_raster(
        path,
        KIND_SPATIAL_PRIOR,
        {"maps": prior.maps},
        {
            "center_px": list(prior.center),
            "focal_length_um": prior.focal_length,
            "pixel_pitch_um": prior.pixel_pitch,
            "shared": prior.shared,
        },
    )


def read_spatial_prior(path: str | Path) -> SpatialPrior:
    header, arrays = read_raster(path, expected_kind=KIND_SPATIAL_PRIOR)
    # Los mapas se guardan en float32; se recortan al rango valido tras leer.
    return SpatialPrior(
        maps=np.clip(arrays["maps"], 0.0, 1.0),
        center=tuple(header["center_px"]),
        focal_length=header.get("focal_length_um"),
        pixel_pitch=header.get("pixel_pitch_um"),
    )


def write_embedding_inputs(path: str | Path, inputs: EmbeddingInputs) -> Path:
    return write_raster(
        path,
        KIND_EMBEDDING,
        {"channel_vector": inputs.channel_vector, "spatial_stack": inputs.spatial_stack},
        {"planes": ["Y", "Cx", "Cy"]},
    )


def read_embedding_inputs(path: str | Path) -> EmbeddingInputs:
    _, arrays = read_raster(path, expected_kind=KIND_EMBEDDING)
    return EmbeddingInputs(channel_vector=arrays["channel_vector"], spatial_stack=arrays["spatial_stack"])


def load_eta_model(path: str | Path) -> EtaModel:
    return EtaModel.model_validate_json(Path(path).read_text(encoding="utf-8"))
