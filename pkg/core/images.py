"""
Modulo de imagenes: tensor de imagen y E/S PNG.

Responsabilidades:
- ImageTensor (C, H, W) float32 con etiqueta de espacio de color
- Funciones de transferencia sRGB <-> lineal
- Lectura/escritura PNG de 8 y 16 bits (gris o RGB)
- Lectura/escritura de mascaras de etiquetas
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Literal

import cv2
import numpy as np
from PIL import Image

from core.errors import DimensionError, InvalidArgumentError
from core.storage import atomic_path, atomic_write_bytes

logger = logging.getLogger(__name__)

ColorSpace = Literal["linear", "srgb8"]

MAX_8BIT: Final[float] = 255.0
MAX_16BIT: Final[float] = 65535.0
PNG_SUFFIX: Final[str] = ".png"


@dataclass(frozen=True)
class ImageTensor:
    """Imagen (C, H, W) con C en {1, 3}; valores float32."""

    values: np.ndarray
    color_space: ColorSpace = "linear"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3 or values.shape[0] not in (1, 3):
            raise DimensionError(f"ImageTensor espera (C, H, W) con C en {{1, 3}}, recibido {values.shape}.")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("ImageTensor contiene valores no finitos.")
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    def clamped(self) -> ImageTensor:
        return ImageTensor(np.clip(self.values, 0.0, 1.0), self.color_space)


def srgb_to_linear(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(values: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


def to_linear(image: ImageTensor) -> ImageTensor:
    if image.color_space == "linear":
        return image
    return ImageTensor(srgb_to_linear(image.values), "linear")


def _decode(path: Path) -> np.ndarray:
    # IMREAD_UNCHANGED conserva 16 bits y devuelve canales en orden BGR(A).
    buffer = np.fromfile(path, dtype=np.uint8)
    pixels = cv2.imdecode(buffer, cv2.IMREAD_UNCHANGED) if buffer.size else None
    if pixels is None:
        raise InvalidArgumentError(f"No se pudo decodificar la imagen {path}.")
    return pixels


def _pixels(path: Path) -> tuple[np.ndarray, float]:
    raw = _decode(path)
    if raw.dtype == np.uint16:
        scale = MAX_16BIT
    elif raw.dtype == np.uint8:
        scale = MAX_8BIT
    else:
        raise InvalidArgumentError(f"Tipo de pixel no soportado en {path}: {raw.dtype}.")
    pixels = raw.astype(np.float64)
    if pixels.ndim == 2:
        return pixels[None], scale
    if pixels.shape[2] == 2:
        return pixels[None, :, :, 0], scale
    rgb = cv2.cvtColor(raw[:, :, :3], cv2.COLOR_BGR2RGB).astype(np.float64)
    return np.moveaxis(rgb, -1, 0), scale


def read_png(path: str | Path, *, linearize: bool = True) -> ImageTensor:
    """
    Lee un PNG de 8 o 16 bits (gris, RGB o con alfa) como ImageTensor en [0, 1].

    Args:
        path: Archivo PNG.
        linearize: Aplica la funcion de transferencia sRGB inversa.
    """
    pixels, scale = _pixels(Path(path))
    encoded = pixels / scale
    if linearize:
        return ImageTensor(srgb_to_linear(encoded), "linear")
    return ImageTensor(encoded, "srgb8")


def _encode_16bit(values: np.ndarray) -> bytes:
    quantized = np.round(values * MAX_16BIT).astype(np.uint16)
    pixels = quantized[0] if quantized.shape[0] == 1 else cv2.cvtColor(np.moveaxis(quantized, 0, -1), cv2.COLOR_RGB2BGR)
    ok, buffer = cv2.imencode(PNG_SUFFIX, pixels)
    if not ok:
        raise InvalidArgumentError("No se pudo codificar el PNG de 16 bits.")
    return buffer.tobytes()


def write_png(path: str | Path, image: ImageTensor, *, bit_depth: int = 8, encode_srgb: bool = True) -> Path:
    """
    Escribe un ImageTensor como PNG de 8 o 16 bits de forma atomica.

    Los PNG de 8 bits se codifican con Pillow y los de 16 bits (gris o RGB)
    con OpenCV.
    """
    if bit_depth not in (8, 16):
        raise InvalidArgumentError(f"Profundidad de bits no soportada: {bit_depth}.")

    values = np.clip(image.values.astype(np.float64), 0.0, 1.0)
    if encode_srgb and image.color_space == "linear":
        values = linear_to_srgb(values)

    if bit_depth == 16:
        return atomic_write_bytes(path, _encode_16bit(values))

    if image.channels == 1:
        pixels = Image.fromarray(np.round(values[0] * MAX_8BIT).astype(np.uint8))
    else:
        pixels = Image.fromarray(np.round(np.moveaxis(values, 0, -1) * MAX_8BIT).astype(np.uint8))
    with atomic_path(path) as tmp:
        pixels.save(tmp, format="PNG")
    return Path(path)


def read_mask(path: str | Path) -> np.ndarray:
    """Mascara de etiquetas enteras (PNG L o 16 bits)."""
    with Image.open(path) as img:
        img.load()
        if img.mode not in ("L", "I;16", "I;16B", "I;16L", "I", "P"):
            raise DimensionError(f"La mascara {path} no es de un canal (modo {img.mode}).")
        return np.asarray(img, dtype=np.int64)


def write_mask(path: str | Path, labels: np.ndarray) -> Path:
    labels = np.asarray(labels)
    if labels.ndim != 2 or np.any(labels < 0):
        raise InvalidArgumentError("La mascara debe ser 2D con etiquetas no negativas.")
    dtype = np.uint8 if labels.max(initial=0) <= 255 else np.uint16
    with atomic_path(path) as tmp:
        Image.fromarray(labels.astype(dtype)).save(tmp, format="PNG")
    return Path(path)


def list_pngs(directory: str | Path) -> list[Path]:
    return sorted(p for p in Path(directory).iterdir() if p.is_file() and p.suffix.lower() == PNG_SUFFIX)
