"""
Modulo de campos escalares complejos sobre rejillas fisicas.

Responsabilidades:
- Definir la rejilla de muestreo (FieldGrid) y el campo complejo (ComplexField)
- Construir ondas planas y aplicar aperturas circulares binarias
- Contabilizar energia e intensidad
- Serializar campos en el contenedor raster (re, im intercalados)

Convencion de rejilla: la muestra (i, j) tiene coordenada
origin + (i - N/2) * pitch, de modo que la muestra DC esta en (N/2, N/2)
para N par. Todas las longitudes estan en micrometros.

Nota: Los campos son inmutables; sus arreglos se marcan de solo lectura.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Final

import numpy as np

from core.errors import DimensionError, InvalidArgumentError
from core.raster_file import read_raster, write_raster

logger = logging.getLogger(__name__)

FLAG_APERTURE_CLIPPED: Final[str] = "aperture_clipped"
KIND_COMPLEX_FIELD: Final[str] = "complex_field"


@dataclass(frozen=True)
class FieldGrid:
    """Rejilla uniforme centrada; pitch y origin en micrometros."""

    samples_x: int
    samples_y: int
    pitch: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if int(self.samples_x) < 2 or int(self.samples_y) < 2:
            raise InvalidArgumentError(
                f"La rejilla requiere al menos 2x2 muestras (recibido "
                f"{self.samples_x}x{self.samples_y})."
            )
        if not (self.pitch > 0 and math.isfinite(self.pitch)):
            raise InvalidArgumentError(f"El pitch debe ser positivo (recibido {self.pitch}).")

    @classmethod
    def square(cls, samples: int, pitch: float) -> FieldGrid:
        return cls(samples_x=samples, samples_y=samples, pitch=pitch)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.samples_y, self.samples_x)

    @property
    def extent(self) -> tuple[float, float]:
        return (self.samples_x * self.pitch, self.samples_y * self.pitch)

    @property
    def half_extent(self) -> float:
        return 0.5 * min(self.extent)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Devuelve (x, y) por eje segun la convencion origin + (i - N/2)*pitch."""
        x = self.origin[0] + (np.arange(self.samples_x) - self.samples_x // 2) * self.pitch
        y = self.origin[1] + (np.arange(self.samples_y) - self.samples_y // 2) * self.pitch
        return x, y

    def radius_squared(self) -> np.ndarray:
        """Mapa r^2 relativo al origen de la rejilla, forma (samples_y, samples_x)."""
        x, y = self.coordinates()
        dx = x - self.origin[0]
        dy = y - self.origin[1]
        return dy[:, None] ** 2 + dx[None, :] ** 2


@dataclass(frozen=True)
class ComplexField:
    """Campo escalar complejo muestreado; wavelength en micrometros."""

    grid: FieldGrid
    values: np.ndarray
    wavelength: float
    flags: tuple[str, ...] = dc_field(default=())

    def __post_init__(self) -> None:
        if not (self.wavelength > 0 and math.isfinite(self.wavelength)):
            raise InvalidArgumentError(
                f"La longitud de onda debe ser positiva (recibido {self.wavelength})."
            )
        values = np.array(self.values, dtype=np.complex128, copy=True)
        if values.shape != self.grid.shape:
            raise DimensionError(
                f"values tiene forma {values.shape}, la rejilla espera {self.grid.shape}."
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    def replace_values(self, values: np.ndarray, *, flags: tuple[str, ...] | None = None) -> ComplexField:
        return ComplexField(
            grid=self.grid,
            values=values,
            wavelength=self.wavelength,
            flags=self.flags if flags is None else flags,
        )


def make_plane_wave(grid: FieldGrid, wavelength: float, amplitude: float = 1.0) -> ComplexField:
    """
    Construye una onda plana de fase nula.

    Args:
        grid: Rejilla de muestreo.
        wavelength: Longitud de onda (um).
        amplitude: Amplitud real no negativa.

    Raises:
        InvalidArgumentError: Si la longitud de onda o la amplitud no son validas.
    """
    if not (amplitude >= 0 and math.isfinite(amplitude)):
        raise InvalidArgumentError(f"La amplitud debe ser >= 0 (recibido {amplitude}).")
    values = np.full(grid.shape, complex(amplitude, 0.0), dtype=np.complex128)
    return ComplexField(grid=grid, values=values, wavelength=wavelength)


def aperture_mask(grid: FieldGrid, radius: float) -> np.ndarray:
    """Mascara binaria P(u, v): True donde sqrt(u^2 + v^2) <= radius."""
    return grid.radius_squared() <= radius * radius


def apply_aperture(field: ComplexField, radius: float) -> ComplexField:
    """
    Anula las muestras fuera de la apertura circular de radio dado.

    Si el radio excede la media extension de la rejilla, el resultado lleva
    la bandera FLAG_APERTURE_CLIPPED y se registra una advertencia.

    Raises:
        InvalidArgumentError: Si radius no es positivo.
    """
    if not (radius > 0 and math.isfinite(radius)):
        raise InvalidArgumentError(f"El radio de apertura debe ser positivo (recibido {radius}).")

    flags = field.flags
    if radius > field.grid.half_extent and FLAG_APERTURE_CLIPPED not in flags:
        logger.warning(
            "Apertura de radio %.3f um recortada por la rejilla (media extension %.3f um).",
            radius,
            field.grid.half_extent,
        )
        flags = flags + (FLAG_APERTURE_CLIPPED,)

    mask = aperture_mask(field.grid, radius)
    return field.replace_values(np.where(mask, field.values, 0.0), flags=flags)


def total_energy(field: ComplexField) -> float:
    """Devuelve sum |E|^2 * pitch^2."""
    power = field.values.real**2 + field.values.imag**2
    return float(math.fsum(power.ravel()) * field.grid.pitch**2)


def intensity_map(field: ComplexField) -> np.ndarray:
    """Intensidad |E|^2 por muestra."""
    return field.values.real**2 + field.values.imag**2


def write_complex_field(path: str | Path, field: ComplexField) -> Path:
    return write_raster(
        path,
        KIND_COMPLEX_FIELD,
        {"values": field.values},
        {
            "samples_x": field.grid.samples_x,
            "samples_y": field.grid.samples_y,
            "pitch_um": field.grid.pitch,
            "origin_um": list(field.grid.origin),
            "wavelength_um": field.wavelength,
            "units": {"length": "um", "field": "dimensionless"},
            "flags": list(field.flags),
        },
    )


def read_complex_field(path: str | Path) -> ComplexField:
    header, arrays = read_raster(path, expected_kind=KIND_COMPLEX_FIELD)
    grid = FieldGrid(
        samples_x=int(header["samples_x"]),
        samples_y=int(header["samples_y"]),
        pitch=float(header["pitch_um"]),
        origin=tuple(header.get("origin_um", (0.0, 0.0))),
    )
    return ComplexField(
        grid=grid,
        values=arrays["values"],
        wavelength=float(header["wavelength_um"]),
        flags=tuple(header.get("flags", ())),
    )
