"""
Modulo del contenedor binario de rasters (encabezado JSON + float32).

Formato:
- Primera linea: JSON compacto UTF-8 terminado en "\\n" con las llaves
  format_version, kind, arrays ([{name, shape, dtype}]) y metadatos.
- A continuacion: los arreglos en orden de encabezado, float32
  little-endian, orden por filas. Los complejos se guardan como pares
  (re, im) intercalados y se declaran con dtype "complex64".

Responsabilidades:
- Escribir contenedores de forma atomica
- Leer y validar contenedores (version, tipo, tamano del payload)
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Final, Mapping

import numpy as np

from core.errors import ConfigurationError
from core.storage import atomic_write_bytes

RASTER_FORMAT_VERSION: Final[int] = 1

_FLOAT_LE: Final[np.dtype] = np.dtype("<f4")
DTYPE_REAL: Final[str] = "float32"
DTYPE_COMPLEX: Final[str] = "complex64"


def _encode_array(values: np.ndarray) -> tuple[bytes, str]:
    if np.iscomplexobj(values):
        pairs = np.empty(values.shape + (2,), dtype=_FLOAT_LE)
        pairs[..., 0] = values.real
        pairs[..., 1] = values.imag
        return pairs.tobytes(order="C"), DTYPE_COMPLEX
    return np.ascontiguousarray(values, dtype=_FLOAT_LE).tobytes(order="C"), DTYPE_REAL


def encode_raster(kind: str, arrays: Mapping[str, np.ndarray], metadata: Mapping[str, Any]) -> bytes:
    """
    Construye los bytes del contenedor.

    Args:
        kind: Tipo de artefacto ("complex_field", "psf_stack", ...).
        arrays: Arreglos por nombre, en el orden en que se escriben.
        metadata: Metadatos serializables a JSON.

    Returns:
        Encabezado + payload.
    """
    blobs: list[bytes] = []
    descriptors: list[dict[str, Any]] = []
    for name, values in arrays.items():
        arr = np.asarray(values)
        blob, dtype = _encode_array(arr)
        blobs.append(blob)
        descriptors.append({"name": name, "shape": list(arr.shape), "dtype": dtype})

    header = {
        **dict(metadata),
        "format_version": RASTER_FORMAT_VERSION,
        "kind": kind,
        "arrays": descriptors,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return head + b"\n" + b"".join(blobs)


def write_raster(path: str | Path, kind: str, arrays: Mapping[str, np.ndarray], metadata: Mapping[str, Any]) -> Path:
    return atomic_write_bytes(path, encode_raster(kind, arrays, metadata))


def decode_raster(payload: bytes, *, expected_kind: str | None = None) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """
    Interpreta bytes de contenedor.

    Returns:
        Tupla (encabezado, arreglos por nombre). Los reales se devuelven en
        float64 y los complejos en complex128.

    Raises:
        ConfigurationError: Si el encabezado o el tamano no son validos.
    """
    newline = payload.find(b"\n")
    if newline < 0:
        raise ConfigurationError("Contenedor raster sin encabezado JSON.")
    try:
        header = json.loads(payload[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError("Encabezado JSON invalido en el contenedor raster.") from exc

    if header.get("format_version") != RASTER_FORMAT_VERSION:
        raise ConfigurationError(
            f"Version de formato no soportada: {header.get('format_version')!r}."
        )
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise ConfigurationError(
            f"Se esperaba un raster '{expected_kind}', se encontro '{header.get('kind')}'."
        )

    body = memoryview(payload)[newline + 1 :]
    offset = 0
    arrays: dict[str, np.ndarray] = {}
    for desc in header.get("arrays", []):
        shape = tuple(int(n) for n in desc["shape"])
        is_complex = desc.get("dtype") == DTYPE_COMPLEX
        count = int(np.prod(shape, dtype=np.int64)) * (2 if is_complex else 1)
        nbytes = count * _FLOAT_LE.itemsize
        if offset + nbytes > len(body):
            raise ConfigurationError(f"Payload truncado en el arreglo '{desc['name']}'.")
        flat = np.frombuffer(body[offset : offset + nbytes], dtype=_FLOAT_LE)
        offset += nbytes
        if is_complex:
            pairs = flat.reshape(shape + (2,)).astype(np.float64)
            arrays[desc["name"]] = pairs[..., 0] + 1j * pairs[..., 1]
        else:
            arrays[desc["name"]] = flat.reshape(shape).astype(np.float64)

    if offset != len(body):
        raise ConfigurationError("El payload tiene bytes sobrantes tras los arreglos declarados.")
    return header, arrays


def read_raster(path: str | Path, *, expected_kind: str | None = None) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    return decode_raster(Path(path).read_bytes(), expected_kind=expected_kind)
