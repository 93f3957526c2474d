"""
Modulo de propagacion de Fresnel, PSFs, barridos focales y eficiencia por canal.

Responsabilidades:
- Propagacion por funcion de transferencia (FFT) con verificacion de muestreo
- Evaluaciones directas de la integral de Fresnel (oraculo, ventana, eje)
- Extraccion de PSFs por longitud de onda y su apilado (PSFStack)
- Barrido focal y vector de eficiencia por longitud de onda

Convenciones: longitudes en micrometros en los argumentos; los documentos
y archivos declaran nm/mm en el nombre del campo.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import fft as sp_fft
from scipy.optimize import minimize_scalar

from core.errors import AliasingError, ConfigurationError, DimensionError, InvalidArgumentError
from core.field import (
    ComplexField,
    FieldGrid,
    apply_aperture,
    intensity_map,
    make_plane_wave,
)
from core.lens import LensDesign, build_transmission, focal_length_at
from core.parallel import parallel_map
from core.raster_file import read_raster, write_raster
from core.units import nm_to_um, um_to_mm, um_to_nm

logger = logging.getLogger(__name__)

Normalization = Literal["unit-sum", "peak-one", "raw"]

KIND_PSF_STACK: Final[str] = "psf_stack"
DEFAULT_PSF_WINDOW: Final[int] = 64
# Margen de la rejilla automatica respecto al diametro.
GRID_MARGIN: Final[float] = 1.02
# Tolerancia para emparejar longitudes de onda (nm).
WAVELENGTH_MATCH_NM: Final[float] = 0.5


class EfficiencyVector(BaseModel):
    """Eficiencia relativa por longitud de onda (nm, orden ascendente)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: Literal[1] = 1
    wavelengths_nm: tuple[float, ...]
    efficiency: tuple[float, ...]

    @model_validator(mode="after")
    def _check_vector(self) -> EfficiencyVector:
        if not self.wavelengths_nm or len(self.wavelengths_nm) != len(self.efficiency):
            raise ValueError("wavelengths_nm y efficiency deben tener la misma longitud (>= 1).")
        if any(b <= a for a, b in zip(self.wavelengths_nm, self.wavelengths_nm[1:])):
            raise ValueError("wavelengths_nm debe ser estrictamente creciente.")
        if any(not (math.isfinite(v) and v >= 0) for v in self.efficiency):
            raise ValueError("Las eficiencias deben ser finitas y no negativas.")
        if max(self.efficiency) <= 0:
            raise ValueError("Al menos una eficiencia debe ser positiva.")
        return self

    def normalized(self) -> EfficiencyVector:
        peak = max(self.efficiency)
        return EfficiencyVector(
            wavelengths_nm=self.wavelengths_nm,
            efficiency=tuple(v / peak for v in self.efficiency),
        )

    def value_at(self, wavelength_nm: float) -> float:
        """Eficiencia normalizada en la entrada que coincide con wavelength_nm."""
        for lam, value in zip(self.wavelengths_nm, self.normalized().efficiency):
            if abs(lam - wavelength_nm) <= WAVELENGTH_MATCH_NM:
                return value
        raise ConfigurationError(
            f"No hay eficiencia para {wavelength_nm:g} nm (disponibles: "
            f"{', '.join(f'{w:g}' for w in self.wavelengths_nm)})."
        )


# Tabla de intensidad en los puntos focales (siete colores, diseno a 532 nm).
TABLE_EFFICIENCY: Final[EfficiencyVector] = EfficiencyVector(
    wavelengths_nm=(410.0, 450.0, 490.0, 532.0, 570.0, 610.0, 650.0),
    efficiency=(0.1738, 0.1885, 0.7032, 0.9920, 0.7371, 0.5281, 0.3524),
)


@dataclass(frozen=True)
class PSFRaster:
    """PSF de una longitud de onda sobre una ventana cuadrada."""

    wavelength_nm: float
    raster: np.ndarray
    pitch: float
    centroid: tuple[float, float]
    window_center: tuple[float, float]
    peak_intensity: float
    normalization: Normalization


@dataclass(frozen=True)
class PSFStack:
    """
    PSFs por longitud de onda sobre ventanas del mismo tamano.

    centroids y window_centers en um relativos al eje optico;
    sensor_distance_mm en mm.
    """

    wavelengths_nm: tuple[float, ...]
    psfs: np.ndarray
    pitch: float
    sensor_distance_mm: float
    centroids: np.ndarray
    window_centers: np.ndarray
    normalization: Normalization = "unit-sum"

    def __post_init__(self) -> None:
        psfs = np.array(self.psfs, dtype=np.float64, copy=True)
        n = len(self.wavelengths_nm)
        if psfs.ndim != 3 or psfs.shape[0] != n:
            raise DimensionError(f"psfs debe tener forma (L, h, w) con L = {n}.")
        if np.any(psfs < 0) or not np.all(np.isfinite(psfs)):
            raise InvalidArgumentError("Las PSFs deben ser finitas y no negativas.")
        if self.normalization == "unit-sum":
            sums = psfs.sum(axis=(1, 2))
            if np.any(np.abs(sums - 1.0) > 1e-9):
                raise InvalidArgumentError("Las PSFs unit-sum deben sumar 1 +/- 1e-9.")
        for name in ("centroids", "window_centers"):
            arr = np.array(getattr(self, name), dtype=np.float64, copy=True).reshape(n, 2)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        psfs.setflags(write=False)
        object.__setattr__(self, "psfs", psfs)

    def index_of(self, wavelength_nm: float) -> int:
        for idx, lam in enumerate(self.wavelengths_nm):
            if abs(lam - wavelength_nm) <= WAVELENGTH_MATCH_NM:
                return idx
        raise ConfigurationError(
            f"El PSFStack no tiene entrada para {wavelength_nm:g} nm (disponibles: "
            f"{', '.join(f'{w:g}' for w in self.wavelengths_nm)})."
        )

    def psf_for(self, wavelength_nm: float) -> np.ndarray:
        return self.psfs[self.index_of(wavelength_nm)]

    @classmethod
    def from_rasters(cls, rasters: Sequence[PSFRaster], sensor_distance: float) -> PSFStack:
        if not rasters:
            raise InvalidArgumentError("Se requiere al menos una PSF.")
        return cls(
            wavelengths_nm=tuple(r.wavelength_nm for r in rasters),
            psfs=np.stack([r.raster for r in rasters]),
            pitch=rasters[0].pitch,
            sensor_distance_mm=um_to_mm(sensor_distance),
            centroids=np.array([r.centroid for r in rasters]),
            window_centers=np.array([r.window_center for r in rasters]),
            normalization=rasters[0].normalization,
        )


@dataclass(frozen=True)
class FocalSweep:
    """Curva de intensidad en el eje contra z (um) y mejor foco refinado."""

    distances: np.ndarray
    intensity: np.ndarray
    best_focus: float
    best_intensity: float


@dataclass(frozen=True)
class SectionProfiles:
    """Perfiles en x a traves del foco propio de cada longitud de onda."""

    wavelengths_nm: tuple[float, ...]
    x: np.ndarray
    focal_distances: tuple[float, ...]
    profiles: np.ndarray
    combined: np.ndarray


def sampling_ratio(grid: FieldGrid, wavelength: float, distance: float) -> float:
    """Indicador lambda*z / (N * pitch^2); la funcion de transferencia es valida si <= 1."""
    n = min(grid.samples_x, grid.samples_y)
    return wavelength * distance / (n * grid.pitch**2)


def limit_distance(grid: FieldGrid, wavelength: float) -> float:
    n = min(grid.samples_x, grid.samples_y)
    return n * grid.pitch**2 / wavelength


def _check_distance(field: ComplexField, distance: float) -> None:
    if not (distance > 0 and math.isfinite(distance)):
        raise InvalidArgumentError(f"La distancia de propagacion debe ser positiva (recibido {distance}).")
    ratio = sampling_ratio(field.grid, field.wavelength, distance)
    if ratio > 1.0:
        raise AliasingError(
            f"Criterio de muestreo violado (lambda*z/(N*pitch^2) = {ratio:.3f}); "
            f"distancia limite {limit_distance(field.grid, field.wavelength):.3f} um."
        )


def _frequencies(grid: FieldGrid) -> tuple[np.ndarray, np.ndarray]:
    fx = sp_fft.fftfreq(grid.samples_x, d=grid.pitch)
    fy = sp_fft.fftfreq(grid.samples_y, d=grid.pitch)
    return fx, fy


def fresnel_transfer_function(grid: FieldGrid, wavelength: float, distance: float) -> np.ndarray:
    """H(fx, fy) = exp(ikz) * exp(-i*pi*lambda*z*(fx^2 + fy^2)) en orden FFT."""
    fx, fy = _frequencies(grid)
    k = 2.0 * math.pi / wavelength
    f2 = fy[:, None] ** 2 + fx[None, :] ** 2
    return np.exp(1j * k * distance) * np.exp(-1j * math.pi * wavelength * distance * f2)


def fresnel_propagate(field: ComplexField, distance: float) -> ComplexField:
    """
    Propaga el campo una distancia z con la funcion de transferencia de Fresnel.

    La salida usa la misma rejilla; la energia se conserva (|H| = 1).

    Raises:
        AliasingError: Si lambda*z/(N*pitch^2) > 1.
    """
    _check_distance(field, distance)
    transfer = fresnel_transfer_function(field.grid, field.wavelength, distance)
    spectrum = sp_fft.fft2(sp_fft.ifftshift(field.values))
    out = sp_fft.fftshift(sp_fft.ifft2(spectrum * transfer))
    return field.replace_values(out)


def fresnel_propagate_direct(field: ComplexField, distance: float) -> ComplexField:
    """
    Evalua el mismo operador discreto de Fresnel con sumas DFT explicitas.

    Costo O(N^3); pensado como oraculo para rejillas pequenas.
    """
    _check_distance(field, distance)
    grid = field.grid
    x, y = grid.coordinates()
    x = x - grid.origin[0]
    y = y - grid.origin[1]
    fx, fy = _frequencies(grid)

    dft_x = np.exp(-2j * math.pi * np.outer(fx, x))
    dft_y = np.exp(-2j * math.pi * np.outer(fy, y))
    spectrum = dft_y @ field.values @ dft_x.T

    k = 2.0 * math.pi / field.wavelength
    transfer = np.exp(1j * k * distance) * np.exp(
        -1j * math.pi * field.wavelength * distance * (fy[:, None] ** 2 + fx[None, :] ** 2)
    )
    out = dft_y.conj().T @ (transfer * spectrum) @ dft_x.conj()
    return field.replace_values(out / (grid.samples_x * grid.samples_y))


def fresnel_window(field: ComplexField, distance: float, *, samples: int, pitch: float) -> np.ndarray:
    """
    Cuadratura directa de la integral de Fresnel sobre una ventana centrada en el eje.

    Args:
        field: Campo en el plano inicial.
        distance: Distancia z (um).
        samples: Muestras por lado de la ventana de salida.
        pitch: Paso de muestreo de la salida (um).

    Returns:
        Campo complejo de forma (samples, samples).
    """
    if distance <= 0:
        raise InvalidArgumentError(f"La distancia debe ser positiva (recibido {distance}).")
    if samples < 1 or pitch <= 0:
        raise InvalidArgumentError("La ventana requiere samples >= 1 y pitch > 0.")

    grid = field.grid
    lam = field.wavelength
    u, v = grid.coordinates()
    u = u - grid.origin[0]
    v = v - grid.origin[1]
    out_axis = (np.arange(samples) - samples // 2) * pitch

    chirp_in = np.exp(1j * math.pi * (v[:, None] ** 2 + u[None, :] ** 2) / (lam * distance))
    kernel_x = np.exp(-2j * math.pi * np.outer(out_axis, u) / (lam * distance))
    kernel_y = np.exp(-2j * math.pi * np.outer(out_axis, v) / (lam * distance))
    summed = kernel_y @ (field.values * chirp_in) @ kernel_x.T

    k = 2.0 * math.pi / lam
    chirp_out = np.exp(1j * math.pi * (out_axis[:, None] ** 2 + out_axis[None, :] ** 2) / (lam * distance))
    prefactor = np.exp(1j * k * distance) / (1j * lam * distance) * grid.pitch**2
    return prefactor * chirp_out * summed


def on_axis_intensity(field: ComplexField, distances: Sequence[float] | np.ndarray) -> np.ndarray:
    """Intensidad en el eje optico para cada z por la integral de Fresnel directa."""
    values = field.values
    support = np.nonzero(values)
    amplitudes = values[support]
    rho2 = field.grid.radius_squared()[support]
    lam = field.wavelength
    area = field.grid.pitch**2

    result = np.empty(len(distances), dtype=np.float64)
    for idx, z in enumerate(np.asarray(distances, dtype=np.float64)):
        if z <= 0:
            raise InvalidArgumentError(f"Distancia no positiva en el barrido: {z}.")
        total = np.sum(amplitudes * np.exp(1j * math.pi * rho2 / (lam * z)))
        result[idx] = (abs(total) * area / (lam * z)) ** 2
    return result


def nyquist_pitch(design: LensDesign, wavelength: float | None = None) -> float:
    """
    Pitch maximo (um) que muestrea la fase del borde con menos de pi rad por muestra.

    El gradiente de la fase de enfoque en el borde es 2*pi*r / (lambda * f(lambda));
    con escalado difractivo lambda * f(lambda) es constante y basta la longitud de
    onda de diseno.
    """
    lam = design.wavelength_um if wavelength is None else wavelength
    return lam * focal_length_at(design, lam) / (2.0 * design.radius_um)


def default_grid(design: LensDesign, samples: int | None = None, *, wavelength: float | None = None) -> FieldGrid:
    """
    Rejilla cuadrada que cubre el diametro de la lente con un 2% de margen.

    Sin samples, elige el menor numero par de muestras cuyo pitch respeta
    nyquist_pitch a la longitud de onda dada (um).
    """
    extent = GRID_MARGIN * 2.0 * design.radius_um
    if samples is None:
        samples = 2 * math.ceil(extent / (2.0 * nyquist_pitch(design, wavelength)))
    return FieldGrid.square(samples, extent / samples)


def lens_field(design: LensDesign, wavelength: float, grid: FieldGrid, *, amplitude: float = 1.0) -> ComplexField:
    """Onda plana -> apertura (D/2) -> mascara de transmision."""
    incident = apply_aperture(make_plane_wave(grid, wavelength, amplitude), design.radius_um)
    mask = build_transmission(design, grid, wavelength)
    return incident.replace_values(incident.values * mask.values)


def _local_centroid(raster: np.ndarray, pitch: float) -> tuple[float, float]:
    h, w = raster.shape
    total = raster.sum()
    xs = (np.arange(w) - w // 2) * pitch
    ys = (np.arange(h) - h // 2) * pitch
    cx = float((raster.sum(axis=0) * xs).sum() / total)
    cy = float((raster.sum(axis=1) * ys).sum() / total)
    return cx, cy


def _normalize(raster: np.ndarray, normalization: Normalization) -> np.ndarray:
    if normalization == "unit-sum":
        return raster / raster.sum()
    if normalization == "peak-one":
        return raster / raster.max()
    return raster


def psf_at(
    design: LensDesign,
    wavelength: float,
    sensor_distance: float,
    grid: FieldGrid,
    *,
    window: int = DEFAULT_PSF_WINDOW,
    sensor_pitch: float | None = None,
    normalization: Normalization = "unit-sum",
) -> PSFRaster:
    """
    PSF de intensidad a una longitud de onda en el plano del sensor.

    Sin sensor_pitch se propaga con la funcion de transferencia sobre la
    rejilla de la lente y se recorta una ventana alrededor del centroide;
    con sensor_pitch se evalua la integral de Fresnel directamente sobre una
    ventana centrada en el eje con ese paso.

    Args:
        design: Diseno de la lente.
        wavelength: Longitud de onda (um).
        sensor_distance: Distancia lente-sensor (um).
        grid: Rejilla del plano de la lente.
        window: Lado de la ventana almacenada (muestras).
        sensor_pitch: Paso de muestreo del sensor (um) o None.
        normalization: "unit-sum", "peak-one" o "raw".

    Raises:
        AliasingError, UnderSampledError: Propagados de las etapas internas.
    """
    field = lens_field(design, wavelength, grid)

    if sensor_pitch is None:
        if window > min(grid.samples_x, grid.samples_y):
            raise InvalidArgumentError(f"La ventana ({window}) excede la rejilla {grid.shape}.")
        intensity = intensity_map(fresnel_propagate(field, sensor_distance))
        if intensity.sum() <= 0:
            raise InvalidArgumentError("La PSF no tiene energia en la rejilla.")
        full_cx, full_cy = _local_centroid(intensity, grid.pitch)
        h, w = intensity.shape
        col = int(np.clip(round(full_cx / grid.pitch) + w // 2 - window // 2, 0, w - window))
        row = int(np.clip(round(full_cy / grid.pitch) + h // 2 - window // 2, 0, h - window))
        raster = intensity[row : row + window, col : col + window]
        pitch = grid.pitch
        window_center = (
            (col + window // 2 - w // 2) * pitch,
            (row + window // 2 - h // 2) * pitch,
        )
    else:
        raster = np.abs(fresnel_window(field, sensor_distance, samples=window, pitch=sensor_pitch)) ** 2
        pitch = sensor_pitch
        window_center = (0.0, 0.0)

    if raster.sum() <= 0:
        raise InvalidArgumentError("La ventana de la PSF no contiene energia.")
    local_cx, local_cy = _local_centroid(raster, pitch)
    return PSFRaster(
        wavelength_nm=um_to_nm(wavelength),
        raster=_normalize(raster, normalization),
        pitch=pitch,
        centroid=(window_center[0] + local_cx, window_center[1] + local_cy),
        window_center=window_center,
        peak_intensity=float(raster.max()),
        normalization=normalization,
    )


def simulate_psf_stack(
    design: LensDesign,
    wavelengths_nm: Sequence[float],
    sensor_distance: float,
    grid: FieldGrid,
    *,
    window: int = DEFAULT_PSF_WINDOW,
    sensor_pitch: float | None = None,
    normalization: Normalization = "unit-sum",
    threads: int = 1,
) -> PSFStack:
    """Simula una PSF por longitud de onda en paralelo y las apila en orden de entrada."""

    def _one(lam_nm: float) -> PSFRaster:
        logger.info("Simulando PSF a %.1f nm, sensor a %.4f mm.", lam_nm, um_to_mm(sensor_distance))
        return psf_at(
            design,
            nm_to_um(lam_nm),
            sensor_distance,
            grid,
            window=window,
            sensor_pitch=sensor_pitch,
            normalization=normalization,
        )

    rasters = parallel_map(_one, list(wavelengths_nm), threads=threads)
    return PSFStack.from_rasters(rasters, sensor_distance)


def write_psf_stack(path: str | Path, stack: PSFStack) -> Path:
    return write_raster(
        path,
        KIND_PSF_STACK,
        {"psfs": stack.psfs},
        {
            "wavelengths_nm": list(stack.wavelengths_nm),
            "pitch_um": stack.pitch,
            "sensor_distance_mm": stack.sensor_distance_mm,
            "centroids_um": stack.centroids.tolist(),
            "window_centers_um": stack.window_centers.tolist(),
            "normalization": stack.normalization,
            "grid": {"window": int(stack.psfs.shape[-1]), "pitch_um": stack.pitch},
        },
    )


def read_psf_stack(path: str | Path) -> PSFStack:
    """Lee un PSFStack; las PSFs unit-sum se renormalizan en float64 tras la lectura."""
    header, arrays = read_raster(path, expected_kind=KIND_PSF_STACK)
    psfs = arrays["psfs"]
    normalization = header.get("normalization", "unit-sum")
    if normalization == "unit-sum":
        psfs = psfs / psfs.sum(axis=(1, 2), keepdims=True)
    return PSFStack(
        wavelengths_nm=tuple(float(v) for v in header["wavelengths_nm"]),
        psfs=psfs,
        pitch=float(header["pitch_um"]),
        sensor_distance_mm=float(header["sensor_distance_mm"]),
        centroids=np.asarray(header["centroids_um"], dtype=np.float64),
        window_centers=np.asarray(header["window_centers_um"], dtype=np.float64),
        normalization=normalization,
    )


def focal_sweep(
    design: LensDesign,
    wavelength: float,
    z_min: float,
    z_max: float,
    steps: int,
    *,
    grid: FieldGrid | None = None,
    amplitude: float = 1.0,
) -> FocalSweep:
    """
    Barre la intensidad en el eje entre z_min y z_max (um).

    El maximo muestreado se refina con una busqueda acotada entre las
    muestras vecinas.

    Raises:
        InvalidArgumentError: Si z_min >= z_max o steps < 3.
    """
    if not 0 < z_min < z_max:
        raise InvalidArgumentError(f"Se requiere 0 < z_min < z_max (recibido {z_min}, {z_max}).")
    if steps < 3:
        raise InvalidArgumentError(f"El barrido requiere steps >= 3 (recibido {steps}).")

    grid = grid or default_grid(design)
    field = lens_field(design, wavelength, grid, amplitude=amplitude)
    distances = np.linspace(z_min, z_max, steps)
    intensity = on_axis_intensity(field, distances)

    best = int(np.argmax(intensity))
    lo = distances[max(best - 1, 0)]
    hi = distances[min(best + 1, steps - 1)]
    refined = minimize_scalar(
        lambda z: -on_axis_intensity(field, [z])[0],
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-6 * (z_max - z_min)},
    )
    best_focus, best_intensity = float(distances[best]), float(intensity[best])
    if refined.success and -refined.fun > best_intensity:
        best_focus, best_intensity = float(refined.x), float(-refined.fun)

    logger.info(
        "Barrido focal a %.1f nm: mejor foco %.4f mm.",
        um_to_nm(wavelength),
        um_to_mm(best_focus),
    )
    return FocalSweep(
        distances=distances,
        intensity=intensity,
        best_focus=best_focus,
        best_intensity=best_intensity,
    )


def channel_efficiency(
    design: LensDesign,
    wavelengths_nm: Sequence[float],
    sensor_distance: float,
    grid: FieldGrid,
    *,
    window: int = DEFAULT_PSF_WINDOW,
    sensor_pitch: float | None = None,
    threads: int = 1,
) -> EfficiencyVector:
    """
    Pico de intensidad de la PSF por longitud de onda, normalizado al maximo.

    Las longitudes de onda se devuelven en orden ascendente.
    """
    if not wavelengths_nm:
        raise InvalidArgumentError("Se requiere al menos una longitud de onda.")
    ordered = sorted(float(w) for w in wavelengths_nm)

    def _peak(lam_nm: float) -> float:
        raster = psf_at(
            design,
            nm_to_um(lam_nm),
            sensor_distance,
            grid,
            window=window,
            sensor_pitch=sensor_pitch,
            normalization="raw",
        )
        return raster.peak_intensity

    peaks = parallel_map(_peak, ordered, threads=threads)
    top = max(peaks)
    return EfficiencyVector(wavelengths_nm=tuple(ordered), efficiency=tuple(p / top for p in peaks))


def section_profiles(
    design: LensDesign,
    wavelengths_nm: Sequence[float],
    grid: FieldGrid,
    *,
    samples: int = DEFAULT_PSF_WINDOW,
    sensor_pitch: float,
    threads: int = 1,
) -> SectionProfiles:
    """
    Perfil de intensidad en x (y = 0) en el foco propio de cada longitud de onda.

    combined es la suma de los perfiles sobre las longitudes de onda.
    """
    ordered = tuple(float(w) for w in wavelengths_nm)

    def _profile(lam_nm: float) -> tuple[float, np.ndarray]:
        lam = nm_to_um(lam_nm)
        z = focal_length_at(design, lam)
        field = lens_field(design, lam, grid)
        window = np.abs(fresnel_window(field, z, samples=samples, pitch=sensor_pitch)) ** 2
        return z, window[samples // 2]

    results = parallel_map(_profile, ordered, threads=threads)
    profiles = np.stack([r[1] for r in results])
    return SectionProfiles(
        wavelengths_nm=ordered,
        x=(np.arange(samples) - samples // 2) * sensor_pitch,
        focal_distances=tuple(r[0] for r in results),
        profiles=profiles,
        combined=profiles.sum(axis=0),
    )
