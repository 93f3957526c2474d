"""
Modulo del modelo de degradacion y de la sintesis de pares de entrenamiento.

Responsabilidades:
- Convolucion FFT centrada en el origen del kernel (convolve_fft)
- Modelo directo por canal: Y -> PSF -> T * ganancia -> ruido correlacionado -> recorte
- Configuracion de degradacion (DegradeConfig) y su documento JSON
- Sintesis de datasets pareados con manifiesto y semillas por imagen

Notas:
- El modelo opera en luz lineal; los PNG sRGB se linealizan al leer y se
  recodifican al escribir.
- Las semillas por imagen dependen solo del nombre del archivo, de modo que
  el resultado no depende del orden ni del numero de hilos.
"""
from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.ndimage import convolve as nd_convolve
from scipy.signal import fftconvolve
from skimage.morphology import disk

from core.errors import ConfigurationError, DatasetError, DimensionError, InvalidArgumentError
from core.images import ImageTensor, list_pngs, read_png, write_png
from core.lens import LensDesign, lens_document
from core.parallel import parallel_map
from core.priors import EtaModel, SpatialPrior, read_spatial_prior, vignetting_prior
from core.propagate import TABLE_EFFICIENCY, EfficiencyVector, PSFStack, read_psf_stack
from core.storage import atomic_directory, atomic_write_json, canonical_json
from core.units import mm_to_um

logger = logging.getLogger(__name__)

DEFAULT_WB_GAINS: Final[tuple[float, float, float]] = (1.67, 1.0, 2.34)
DEFAULT_CHANNEL_WAVELENGTHS_NM: Final[tuple[float, float, float]] = (650.0, 532.0, 450.0)
DEFAULT_NOISE_SIGMA: Final[float] = 0.01
DEFAULT_NOISE_RADIUS_PX: Final[int] = 2
PSF_SUM_RTOL: Final[float] = 1e-6
SEED_MASK: Final[int] = (1 << 63) - 1
MANIFEST_NAME: Final[str] = "manifest.json"


class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    sigma: float = Field(default=DEFAULT_NOISE_SIGMA, ge=0)
    correlation_radius_px: int = Field(default=DEFAULT_NOISE_RADIUS_PX, ge=0)


class VignettingRecipe(BaseModel):
    """Y sintetico: eta(theta) * cos^4(theta) con un modelo compartido o uno por canal."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    focal_length_mm: float = Field(gt=0)
    pixel_pitch_um: float = Field(gt=0)
    etas: tuple[EtaModel, ...] = (EtaModel(),)

    @model_validator(mode="after")
    def _check_etas(self) -> VignettingRecipe:
        if len(self.etas) not in (1, 3):
            raise ValueError("etas debe tener 1 o 3 modelos.")
        return self

    def build(self, width: int, height: int) -> SpatialPrior:
        return vignetting_prior(width, height, mm_to_um(self.focal_length_mm), self.pixel_pitch_um, self.etas)


class DegradeConfigDocument(BaseModel):
    """Documento JSON de configuracion; las rutas relativas parten del directorio del documento."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: Literal[1] = 1
    psf_path: str
    efficiency: EfficiencyVector | None = None
    efficiency_path: str | None = None
    spatial_paths: tuple[str, ...] | None = None
    vignetting: VignettingRecipe | None = None
    wb_gains: tuple[float, float, float] = DEFAULT_WB_GAINS
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    channel_wavelengths_nm: tuple[float, float, float] = DEFAULT_CHANNEL_WAVELENGTHS_NM

    @model_validator(mode="after")
    def _check_document(self) -> DegradeConfigDocument:
        if self.efficiency is not None and self.efficiency_path is not None:
            raise ValueError("Use efficiency o efficiency_path, no ambos.")
        if self.spatial_paths is not None and self.vignetting is not None:
            raise ValueError("Use spatial_paths o vignetting, no ambos.")
        if self.spatial_paths is not None and len(self.spatial_paths) not in (1, 3):
            raise ValueError("spatial_paths debe tener 1 o 3 rutas.")
        if any(g <= 0 for g in self.wb_gains):
            raise ValueError("Las ganancias de balance de blancos deben ser positivas.")
        return self


@dataclass(frozen=True)
class DegradeConfig:
    """Configuracion resuelta del modelo de degradacion."""

    psf: PSFStack
    efficiency: EfficiencyVector = TABLE_EFFICIENCY
    spatial: SpatialPrior | VignettingRecipe | None = None
    wb_gains: tuple[float, float, float] = DEFAULT_WB_GAINS
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    noise_radius: int = DEFAULT_NOISE_RADIUS_PX
    seed: int = 0
    channel_wavelengths_nm: tuple[float, float, float] = DEFAULT_CHANNEL_WAVELENGTHS_NM

    def __post_init__(self) -> None:
        if len(self.wb_gains) != 3 or any(g <= 0 for g in self.wb_gains):
            raise InvalidArgumentError(f"wb_gains debe tener 3 valores positivos (recibido {self.wb_gains}).")
        if self.noise_sigma < 0 or self.noise_radius < 0:
            raise InvalidArgumentError("sigma y correlation_radius deben ser >= 0.")
        if len(self.channel_wavelengths_nm) != 3:
            raise InvalidArgumentError("Se requieren 3 longitudes de onda de canal.")

    def channel_psf(self, index: int) -> np.ndarray:
        return self.psf.psf_for(self.channel_wavelengths_nm[index])

    def channel_efficiency(self, index: int) -> float:
        return self.efficiency.value_at(self.channel_wavelengths_nm[index])

    def channel_scale(self, index: int) -> float:
        """T(lambda) * ganancia para el canal."""
        return self.channel_efficiency(index) * self.wb_gains[index]

    def spatial_maps(self, height: int, width: int) -> np.ndarray | None:
        """Mapas Y (3, H, W) para la imagen, o None si Y = 1."""
        if self.spatial is None:
            return None
        prior = self.spatial.build(width, height) if isinstance(self.spatial, VignettingRecipe) else self.spatial
        if prior.shape != (height, width):
            raise ConfigurationError(f"El prior espacial {prior.shape} no coincide con la imagen {(height, width)}.")
        return np.stack([prior.channel(i) for i in range(3)])

    def validate_channels(self) -> None:
        """Comprueba que cada canal tenga PSF y eficiencia."""
        for index in range(3):
            self.channel_psf(index)
            self.channel_efficiency(index)


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_degrade_config(path: str | Path) -> DegradeConfig:
    """
    Carga y resuelve un DegradeConfigDocument.

    Raises:
        ConfigurationError: Si faltan archivos referenciados o el mapeo de canales falla.
    """
    path = Path(path)
    document = DegradeConfigDocument.model_validate_json(path.read_text(encoding="utf-8"))
    base = path.parent
    try:
        psf = read_psf_stack(_resolve(base, document.psf_path))
        if document.efficiency_path is not None:
            efficiency = EfficiencyVector.model_validate_json(
                _resolve(base, document.efficiency_path).read_text(encoding="utf-8")
            )
        else:
            efficiency = document.efficiency or TABLE_EFFICIENCY
        spatial: SpatialPrior | VignettingRecipe | None = document.vignetting
        if document.spatial_paths is not None:
            priors = [read_spatial_prior(_resolve(base, p)) for p in document.spatial_paths]
            spatial = priors[0] if len(priors) == 1 else SpatialPrior(
                maps=np.stack([p.channel(0) for p in priors]), center=priors[0].center
            )
    except FileNotFoundError as exc:
        raise ConfigurationError(f"Archivo referenciado no encontrado: {exc.filename}") from exc

    cfg = DegradeConfig(
        psf=psf,
        efficiency=efficiency,
        spatial=spatial,
        wb_gains=document.wb_gains,
        noise_sigma=document.noise.sigma,
        noise_radius=document.noise.correlation_radius_px,
        seed=document.seed,
        channel_wavelengths_nm=document.channel_wavelengths_nm,
    )
    cfg.validate_channels()
    return cfg


def _digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f4").tobytes()).hexdigest()


def config_hash(cfg: DegradeConfig) -> str:
    """Hash de contenido de la configuracion (JSON canonico con resumenes de arreglos)."""
    if isinstance(cfg.spatial, SpatialPrior):
        spatial: object = {"maps_sha256": _digest(cfg.spatial.maps), "center": list(cfg.spatial.center)}
    elif isinstance(cfg.spatial, VignettingRecipe):
        spatial = json.loads(cfg.spatial.model_dump_json())
    else:
        spatial = None
    document = {
        "psf": {
            "wavelengths_nm": list(cfg.psf.wavelengths_nm),
            "psfs_sha256": _digest(cfg.psf.psfs),
            "pitch_um": cfg.psf.pitch,
        },
        "efficiency": json.loads(cfg.efficiency.model_dump_json()),
        "spatial": spatial,
        "wb_gains": list(cfg.wb_gains),
        "noise": {"sigma": cfg.noise_sigma, "correlation_radius_px": cfg.noise_radius},
        "seed": cfg.seed,
        "channel_wavelengths_nm": list(cfg.channel_wavelengths_nm),
    }
    return hashlib.sha256(canonical_json(document).encode("utf-8")).hexdigest()


def psf_centroid(psf: np.ndarray) -> tuple[int, int]:
    """Centroide (fila, columna) redondeado del kernel."""
    total = psf.sum()
    rows = np.arange(psf.shape[0])
    cols = np.arange(psf.shape[1])
    cy = float(psf.sum(axis=1) @ rows / total)
    cx = float(psf.sum(axis=0) @ cols / total)
    return int(round(cy)), int(round(cx))


def raster_centre(psf: np.ndarray) -> tuple[int, int]:
    """Centro (fila, columna) del raster: el eje optico de las PSFs simuladas."""
    return psf.shape[0] // 2, psf.shape[1] // 2


def convolve_fft(channel: np.ndarray, psf: np.ndarray, *, origin: tuple[int, int] | None = None) -> np.ndarray:
    """
    Convolucion lineal por FFT con relleno de ceros, recortada al tamano de entrada.

    Args:
        channel: Plano 2D.
        psf: Kernel 2D no negativo; se normaliza con advertencia si no suma 1.
        origin: (fila, columna) del kernel que cae sobre cada pixel de salida;
            por defecto el centroide redondeado.

    Returns:
        Plano float64 con la forma de channel.
    """
    channel = np.asarray(channel, dtype=np.float64)
    psf = np.asarray(psf, dtype=np.float64)
    if channel.ndim != 2 or psf.ndim != 2:
        raise DimensionError("convolve_fft espera canal y PSF 2D.")
    if np.any(psf < 0):
        raise InvalidArgumentError("La PSF debe ser no negativa.")
    total = float(psf.sum())
    if total <= 0:
        raise InvalidArgumentError("La PSF no tiene masa.")
    if abs(total - 1.0) > PSF_SUM_RTOL:
        logger.warning("PSF no normalizada (suma %.6g); se normaliza.", total)
        psf = psf / total

    oy, ox = origin if origin is not None else psf_centroid(psf)
    support = np.argwhere(psf != 0)
    if support.shape[0] == 1 and tuple(support[0]) == (oy, ox):
        return channel * psf[oy, ox]

    h, w = channel.shape
    full = fftconvolve(channel, psf, mode="full")
    return full[oy : oy + h, ox : ox + w]


def forward_model(clean: ImageTensor, cfg: DegradeConfig) -> np.ndarray:
    """
    Modelo directo sin ruido ni recorte: (C, H, W) float64.

    Por canal: x * Y -> convolucion con la PSF -> T(lambda) * ganancia.

    El origen del kernel es el centro del raster (eje optico), no su
    centroide: un desplazamiento lateral de la PSF se conserva en la salida
    como franja cromatica.
    """
    if clean.channels != 3:
        raise DimensionError(f"La degradacion requiere 3 canales (recibido {clean.channels}).")
    values = clean.values.astype(np.float64)
    maps = cfg.spatial_maps(clean.height, clean.width)
    out = np.empty_like(values)
    for index in range(3):
        plane = values[index] if maps is None else values[index] * maps[index]
        psf = cfg.channel_psf(index)
        out[index] = convolve_fft(plane, psf, origin=raster_centre(psf)) * cfg.channel_scale(index)
    return out


def correlated_noise(shape: tuple[int, int], sigma: float, radius: int, rng: np.random.Generator) -> np.ndarray:
    """Ruido gaussiano blanco filtrado por un disco de radio dado, varianza sigma^2."""
    white = rng.standard_normal(shape) * sigma
    if radius == 0 or sigma == 0:
        return white
    kernel = disk(radius).astype(np.float64)
    kernel /= np.sqrt(np.sum(kernel**2))
    return nd_convolve(white, kernel, mode="wrap")


def derive_image_seed(seed: int, name: str) -> int:
    """Semilla por imagen: seed XOR hash estable del nombre."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return (int(seed) ^ int.from_bytes(digest[:8], "little")) & SEED_MASK


def degrade_image(clean: ImageTensor, cfg: DegradeConfig, *, seed: int | None = None) -> ImageTensor:
    """
    Aplica el modelo completo de degradacion.

    Args:
        clean: Imagen lineal de 3 canales.
        cfg: Configuracion resuelta.
        seed: Semilla del ruido; por defecto cfg.seed.

    Returns:
        ImageTensor lineal recortado a [0, 1].
    """
    out = forward_model(clean, cfg)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        for index in range(out.shape[0]):
            out[index] += correlated_noise(out.shape[1:], cfg.noise_sigma, cfg.noise_radius, rng)
    return ImageTensor(np.clip(out, 0.0, 1.0), "linear")


class DatasetEntry(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    degraded_path: str | None = None
    clean_path: str | None = None
    mask_path: str | None = None
    seed: int | None = None
    config_hash: str
    error: str | None = None


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: Literal[1] = 1
    lens: dict
    config_hash: str
    entries: tuple[DatasetEntry, ...]

    @property
    def ok_entries(self) -> tuple[DatasetEntry, ...]:
        return tuple(e for e in self.entries if e.error is None)


@dataclass(frozen=True)
class DatasetInput:
    clean_path: Path
    mask_path: Path | None = None


def collect_inputs(source: str | Path) -> list[DatasetInput]:
    """
    Lista entradas desde un directorio de PNG (mascaras en <dir>/masks) o
    desde un JSON {"entries": [{"clean_path", "mask_path"}]}.
    """
    source = Path(source)
    if source.is_dir():
        masks = source / "masks"
        return [
            DatasetInput(p, masks / p.name if (masks / p.name).is_file() else None)
            for p in list_pngs(source)
        ]
    document = json.loads(source.read_text(encoding="utf-8"))
    base = source.parent
    inputs = []
    for item in document.get("entries", []):
        clean = _resolve(base, item["clean_path"])
        mask = item.get("mask_path")
        inputs.append(DatasetInput(clean, _resolve(base, mask) if mask else None))
    return inputs


def load_dataset_manifest(path: str | Path) -> DatasetManifest:
    return DatasetManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


def synthesize_dataset(
    inputs: Sequence[DatasetInput],
    lens: LensDesign,
    cfg: DegradeConfig,
    out_dir: str | Path,
    *,
    threads: int = 1,
) -> DatasetManifest:
    """
    Genera pares (degradada, limpia[, mascara]) y el manifiesto en out_dir.

    Las entradas ilegibles quedan registradas con su error; si ninguna se
    procesa se lanza DatasetError y out_dir no se modifica.
    """
    digest = config_hash(cfg)
    names = [item.clean_path.name for item in inputs]
    duplicated = {name for name in names if names.count(name) > 1}

    with atomic_directory(out_dir) as staging:
        for sub in ("degraded", "clean", "masks"):
            (staging / sub).mkdir()

        def _process(item: DatasetInput) -> DatasetEntry:
            name = item.clean_path.name
            if name in duplicated:
                return DatasetEntry(name=name, config_hash=digest, error="Nombre de archivo duplicado en la entrada.")
            seed = derive_image_seed(cfg.seed, name)
            try:
                clean = read_png(item.clean_path)
                degraded = degrade_image(clean, cfg, seed=seed)
                write_png(staging / "degraded" / name, degraded)
                shutil.copyfile(item.clean_path, staging / "clean" / name)
                mask_rel = None
                if item.mask_path is not None:
                    shutil.copyfile(item.mask_path, staging / "masks" / name)
                    mask_rel = f"masks/{name}"
            except (OSError, ValueError) as exc:
                logger.warning("No se pudo procesar %s: %s", item.clean_path, exc)
                return DatasetEntry(name=name, seed=seed, config_hash=digest, error=str(exc))
            return DatasetEntry(
                name=name,
                degraded_path=f"degraded/{name}",
                clean_path=f"clean/{name}",
                mask_path=mask_rel,
                seed=seed,
                config_hash=digest,
            )

        entries = sorted(parallel_map(_process, list(inputs), threads=threads), key=lambda entry: entry.name)
        manifest = DatasetManifest(lens=lens_document(lens), config_hash=digest, entries=tuple(entries))
        if not manifest.ok_entries:
            raise DatasetError("Ninguna imagen de entrada pudo procesarse.")
        atomic_write_json(staging / MANIFEST_NAME, json.loads(manifest.model_dump_json()))

    logger.info("Dataset sintetizado: %d/%d entradas.", len(manifest.ok_entries), len(entries))
    return manifest
