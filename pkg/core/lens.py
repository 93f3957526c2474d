"""
Modulo de diseno de fase de la metalente y de su mascara de transmision.

Responsabilidades:
- Documentos de diseno (LensDesign, AchromaticDesign, MetaAtomLUT)
- Fase de enfoque, fase acromatica adicional y escalado focal
- Construccion de la transmision compleja T(u, v) sobre una rejilla

Unidades: los documentos declaran la unidad en el nombre del campo
(_mm, _nm, _rad); las funciones numericas trabajan en micrometros.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Final, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import InvalidArgumentError, OutOfBandError, UnderSampledError
from core.field import ComplexField, FieldGrid, aperture_mask
from core.units import mm_to_um, nm_to_um

logger = logging.getLogger(__name__)

LENS_FORMAT_VERSION: Final[int] = 1
TWO_PI: Final[float] = 2.0 * math.pi

# Limites del rango de diseno (nm).
WAVELENGTH_DESIGN_MIN_NM: Final[float] = 380.0
WAVELENGTH_DESIGN_MAX_NM: Final[float] = 750.0

# Guardia de resolucion: pitch <= diametro / 64.
RESOLUTION_GUARD_DIVISOR: Final[int] = 64

# Tolerancia relativa en los bordes de banda acromatica.
BAND_EDGE_RTOL: Final[float] = 1e-9

PhaseMode = Literal["ideal", "achromatic", "lut"]
FocalScalingMode = Literal["diffractive", "proportional"]


class AchromaticDesign(BaseModel):
    """Banda [lambda_min, lambda_max] (nm) y desfase maximo delta (rad)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda_min_nm: float = Field(gt=0)
    lambda_max_nm: float = Field(gt=0)
    delta_rad: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check_band(self) -> AchromaticDesign:
        if not self.lambda_min_nm < self.lambda_max_nm:
            raise ValueError("lambda_min_nm debe ser menor que lambda_max_nm.")
        return self


class MetaAtomLUT(BaseModel):
    """Biblioteca de meta-atomos: diametro (nm) -> fase (rad) y amplitud."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: Literal[1] = LENS_FORMAT_VERSION
    diameters_nm: tuple[float, ...]
    phase_rad: tuple[float, ...]
    transmission: tuple[float, ...]
    period_nm: float = Field(default=280.0, gt=0)
    height_nm: float = Field(default=850.0, gt=0)

    @model_validator(mode="after")
    def _check_tables(self) -> MetaAtomLUT:
        n = len(self.diameters_nm)
        if n < 2 or len(self.phase_rad) != n or len(self.transmission) != n:
            raise ValueError("La LUT requiere >= 2 entradas y arreglos de igual longitud.")
        if any(not 0.0 <= a <= 1.0 for a in self.transmission):
            raise ValueError("Las amplitudes de transmision deben estar en [0, 1].")
        if any(d <= 0 for d in self.diameters_nm):
            raise ValueError("Los diametros deben ser positivos.")

        # n niveles equiespaciados cubren 2*pi con un rango de 2*pi*(n-1)/n.
        by_diameter = np.argsort(self.diameters_nm, kind="stable")
        unwrapped = np.unwrap(np.asarray(self.phase_rad, dtype=np.float64)[by_diameter])
        span = float(unwrapped.max() - unwrapped.min())
        required = TWO_PI * (n - 1) / n
        if span < required * (1.0 - 1e-9):
            raise ValueError(
                f"La fase de la LUT cubre {span:.4f} rad; se requieren al menos {required:.4f} rad."
            )
        return self


class LensDesign(BaseModel):
    """Parametros de la metalente (diametro y focal en mm, longitud de onda en nm)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    format_version: Literal[1] = LENS_FORMAT_VERSION
    diameter_mm: float = Field(gt=0)
    focal_length_design_mm: float = Field(gt=0)
    wavelength_design_nm: float
    phase_mode: PhaseMode = "ideal"
    focal_scaling_mode: FocalScalingMode = "diffractive"
    achromatic: AchromaticDesign | None = None
    lut: MetaAtomLUT | None = None

    @model_validator(mode="after")
    def _check_design(self) -> LensDesign:
        if not WAVELENGTH_DESIGN_MIN_NM < self.wavelength_design_nm < WAVELENGTH_DESIGN_MAX_NM:
            raise ValueError(
                f"wavelength_design_nm debe estar en ({WAVELENGTH_DESIGN_MIN_NM:g}, "
                f"{WAVELENGTH_DESIGN_MAX_NM:g}) nm."
            )
        if self.phase_mode == "lut" and self.lut is None:
            raise ValueError("phase_mode 'lut' requiere una LUT de meta-atomos.")
        if self.phase_mode == "achromatic" and self.achromatic is None:
            raise ValueError("phase_mode 'achromatic' requiere parametros acromaticos.")
        return self

    @property
    def radius_um(self) -> float:
        return 0.5 * mm_to_um(self.diameter_mm)

    @property
    def focal_length_um(self) -> float:
        return mm_to_um(self.focal_length_design_mm)

    @property
    def wavelength_um(self) -> float:
        return nm_to_um(self.wavelength_design_nm)


# Lente de referencia: 2.6 mm de diametro, 10 mm de focal, diseno en verde.
REFERENCE_LENS: Final[LensDesign] = LensDesign(
    diameter_mm=2.6,
    focal_length_design_mm=10.0,
    wavelength_design_nm=532.0,
)


def load_lens_design(path: str | Path) -> LensDesign:
    return LensDesign.model_validate_json(Path(path).read_text(encoding="utf-8"))


def load_meta_atom_lut(path: str | Path) -> MetaAtomLUT:
    return MetaAtomLUT.model_validate_json(Path(path).read_text(encoding="utf-8"))


def lens_document(design: LensDesign) -> dict:
    """Representacion JSON del diseno (para manifiestos y archivos)."""
    return json.loads(design.model_dump_json())


def _sag(r: np.ndarray | float, focal_length: float) -> np.ndarray | float:
    # sqrt(r^2 + f^2) - f en forma estable para r << f.
    r2 = np.square(r)
    return r2 / (np.sqrt(r2 + focal_length * focal_length) + focal_length)


def focusing_phase(r: np.ndarray | float, wavelength: float, focal_length: float) -> np.ndarray | float:
    """
    Fase requerida -(2*pi/lambda) * (sqrt(r^2 + f^2) - f).

    Args:
        r: Distancia radial (misma unidad que wavelength y focal_length).
        wavelength: Longitud de onda > 0.
        focal_length: Distancia focal > 0.

    Returns:
        Fase en radianes (<= 0), escalar o arreglo segun r.
    """
    if wavelength <= 0 or focal_length <= 0:
        raise InvalidArgumentError("wavelength y focal_length deben ser positivos.")
    return -(TWO_PI * _sag(r, focal_length)) / wavelength


def achromatic_delta_phase(
    r: np.ndarray | float,
    wavelength: float,
    design: AchromaticDesign,
    focal_length: float,
) -> np.ndarray | float:
    """
    Desfase adicional dependiente de la longitud de onda para la variante acromatica.

    Suma de tres terminos: el termino de enfoque relativo a lambda_max, el
    termino delta/lambda escalado por la banda y la constante de anclaje.

    Args:
        r: Distancia radial (um).
        wavelength: Longitud de onda (um), dentro de la banda.
        design: Banda y delta.
        focal_length: Focal de diseno (um).

    Raises:
        OutOfBandError: Si wavelength esta fuera de [lambda_min, lambda_max].
    """
    lam_min = nm_to_um(design.lambda_min_nm)
    lam_max = nm_to_um(design.lambda_max_nm)
    tol = BAND_EDGE_RTOL * lam_max
    if not (lam_min - tol <= wavelength <= lam_max + tol):
        raise OutOfBandError(
            f"Longitud de onda {wavelength * 1e3:.3f} nm fuera de la banda "
            f"[{design.lambda_min_nm:g}, {design.lambda_max_nm:g}] nm."
        )

    band = lam_max - lam_min
    focusing_term = -TWO_PI * _sag(r, focal_length) * (1.0 / wavelength - 1.0 / lam_max)
    delay_term = (design.delta_rad / wavelength) * (lam_min * lam_max / band)
    anchor_term = -design.delta_rad * lam_min / band
    return focusing_term + delay_term + anchor_term


def focal_length_at(design: LensDesign, wavelength: float) -> float:
    """
    Focal efectiva (um) a la longitud de onda dada (um).

    diffractive: f0 * lambda0 / lambda; proportional: f0 * lambda / lambda0.
    """
    if wavelength <= 0:
        raise InvalidArgumentError(f"La longitud de onda debe ser positiva (recibido {wavelength}).")
    ratio = design.wavelength_um / wavelength
    if design.focal_scaling_mode == "proportional":
        ratio = 1.0 / ratio
    return design.focal_length_um * ratio


def mask_phase(design: LensDesign, r: np.ndarray | float, wavelength: float) -> np.ndarray | float:
    """
    Fase objetivo que la lente impone a la longitud de onda de iluminacion.

    En modos ideal y lut la mascara enfoca en focal_length_at(design, lambda);
    en modo acromatico todas las longitudes de la banda enfocan en f0.
    """
    if design.phase_mode == "achromatic":
        assert design.achromatic is not None
        lam_max = nm_to_um(design.achromatic.lambda_max_nm)
        f0 = design.focal_length_um
        return focusing_phase(r, lam_max, f0) + achromatic_delta_phase(r, wavelength, design.achromatic, f0)
    return focusing_phase(r, wavelength, focal_length_at(design, wavelength))


def lut_lookup(lut: MetaAtomLUT, target_phase: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Asigna a cada fase objetivo la entrada de LUT mas cercana (distancia circular).

    Los empates se resuelven hacia el diametro menor.

    Returns:
        Tupla (fase_asignada, amplitud_asignada) con la forma de target_phase.
    """
    order = np.argsort(np.asarray(lut.diameters_nm), kind="stable")
    phases = np.asarray(lut.phase_rad, dtype=np.float64)[order]
    amps = np.asarray(lut.transmission, dtype=np.float64)[order]

    wrapped = np.mod(np.asarray(target_phase, dtype=np.float64), TWO_PI)
    entries = np.mod(phases, TWO_PI)
    diff = np.abs(wrapped[..., None] - entries)
    distance = np.minimum(diff, TWO_PI - diff)
    # argmin devuelve el primer minimo: diametro menor en empate.
    idx = np.argmin(distance, axis=-1)
    return phases[idx], amps[idx]


def _warn_if_phase_undersampled(design: LensDesign, grid: FieldGrid, wavelength: float) -> None:
    r_edge = min(design.radius_um, grid.half_extent)
    step = 2.0 * grid.pitch
    r_in = max(r_edge - step, 0.0)
    phase_step = abs(float(mask_phase(design, r_edge, wavelength) - mask_phase(design, r_in, wavelength))) / 2.0
    if phase_step > math.pi:
        logger.warning(
            "Fase submuestreada en el borde de la lente: %.2f rad por muestra (pitch %.3f um).",
            phase_step,
            grid.pitch,
        )


def build_transmission(design: LensDesign, grid: FieldGrid, wavelength: float) -> ComplexField:
    """
    Construye T(u, v) = A * exp(i * phi) sobre la rejilla.

    Args:
        design: Diseno de la lente.
        grid: Rejilla (pitch en um).
        wavelength: Longitud de onda de iluminacion (um).

    Returns:
        Campo complejo con ceros fuera del radio de la lente.

    Raises:
        UnderSampledError: Si pitch > diametro / 64.
    """
    max_pitch = mm_to_um(design.diameter_mm) / RESOLUTION_GUARD_DIVISOR
    if grid.pitch > max_pitch:
        raise UnderSampledError(
            f"Pitch {grid.pitch:.4f} um demasiado grueso; se requiere pitch <= {max_pitch:.4f} um."
        )
    _warn_if_phase_undersampled(design, grid, wavelength)

    r = np.sqrt(grid.radius_squared())
    phase = mask_phase(design, r, wavelength)
    if design.phase_mode == "lut":
        assert design.lut is not None
        phase, amplitude = lut_lookup(design.lut, phase)
    else:
        amplitude = np.ones(grid.shape)

    values = amplitude * np.exp(1j * phase)
    values = np.where(aperture_mask(grid, design.radius_um), values, 0.0)
    return ComplexField(grid=grid, values=values, wavelength=wavelength)
