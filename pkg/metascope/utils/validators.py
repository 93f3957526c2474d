"""
Validadores reutilizables para las entradas de los comandos de metascope.

Este módulo centraliza validaciones simples para:
- Longitudes con sufijo de unidad y listas de longitudes.
- Rutas de entrada (archivo o directorio) y de salida.
- Enteros y reales positivos.
- Documentos JSON con esquema (pydantic).

Los comandos convierten un resultado fallido en un error de validación
(código de salida 1) antes de iniciar cualquier trabajo.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Final

from pydantic import BaseModel, ValidationError

from core.errors import InvalidArgumentError
from core.units import parse_length, parse_length_list


@dataclass(frozen=True)
class ValidationResult:
    """Representa el resultado de una validación para uso en comandos y servicios."""

    ok: bool
    message: str = ""


OK: Final[ValidationResult] = ValidationResult(True, "")

MSG_MISSING_PATH: Final[str] = "{name}: path does not exist: {path}"
MSG_NOT_A_FILE: Final[str] = "{name}: expected a file: {path}"
MSG_NOT_A_DIR: Final[str] = "{name}: expected a directory: {path}"
MSG_OUTPUT_IS_DIR: Final[str] = "{name}: output path is an existing directory: {path}"
MSG_OUTPUT_IS_FILE: Final[str] = "{name}: output path is an existing file: {path}"
MSG_OUTPUT_PARENT: Final[str] = "{name}: parent of output path is not a directory: {path}"
MSG_BAD_LENGTH: Final[str] = "{name}: {detail}"
MSG_NOT_POSITIVE: Final[str] = "{name} must be positive (got {value})."
MSG_NOT_INTEGER: Final[str] = "{name} must be an integer (got {value!r})."
MSG_NOT_NUMBER: Final[str] = "{name} must be a number (got {value!r})."
MSG_BAD_SIZE: Final[str] = "{name} must look like WIDTHxHEIGHT (got {value!r})."
MSG_BAD_DOCUMENT: Final[str] = "{name}: invalid document {path}: {detail}"

_SIZE_RE: Final[re.Pattern[str]] = re.compile(r"^\s*(\d+)\s*[xX]\s*(\d+)\s*$")


def validate_length(text: str | None, *, name: str, default_unit: str | None = None) -> ValidationResult:
    """
    Valida una longitud positiva con unidad explícita ("10mm", "532nm").

    Nota:
    - Sin default_unit, un número sin sufijo es un error.
    """
    try:
        value = parse_length(text or "", default_unit=default_unit)
    except InvalidArgumentError as exc:
        return ValidationResult(False, MSG_BAD_LENGTH.format(name=name, detail=exc))
    if value <= 0:
        return ValidationResult(False, MSG_NOT_POSITIVE.format(name=name, value=text))
    return OK


def validate_length_list(text: str | None, *, name: str, default_unit: str | None = None) -> ValidationResult:
    """Valida una lista separada por comas de longitudes positivas."""
    try:
        values = parse_length_list(text or "", default_unit=default_unit)
    except InvalidArgumentError as exc:
        return ValidationResult(False, MSG_BAD_LENGTH.format(name=name, detail=exc))
    if any(v <= 0 for v in values):
        return ValidationResult(False, MSG_NOT_POSITIVE.format(name=name, value=text))
    return OK


def validate_input_file(path: Path, *, name: str) -> ValidationResult:
    if not path.exists():
        return ValidationResult(False, MSG_MISSING_PATH.format(name=name, path=path))
    if not path.is_file():
        return ValidationResult(False, MSG_NOT_A_FILE.format(name=name, path=path))
    return OK


def validate_input_dir(path: Path, *, name: str) -> ValidationResult:
    if not path.exists():
        return ValidationResult(False, MSG_MISSING_PATH.format(name=name, path=path))
    if not path.is_dir():
        return ValidationResult(False, MSG_NOT_A_DIR.format(name=name, path=path))
    return OK


def validate_input_path(path: Path, *, name: str) -> ValidationResult:
    """Acepta un archivo o un directorio existente."""
    if not path.exists():
        return ValidationResult(False, MSG_MISSING_PATH.format(name=name, path=path))
    return OK


def validate_output_path(path: Path, *, name: str, directory: bool = False) -> ValidationResult:
    """
    Valida que la salida pueda escribirse de forma atómica.

    Nota:
    - Un directorio de salida existente se reemplaza completo al final.
    - El padre puede no existir; se crea al escribir.
    """
    if path.exists():
        if directory and not path.is_dir():
            return ValidationResult(False, MSG_OUTPUT_IS_FILE.format(name=name, path=path))
        if not directory and path.is_dir():
            return ValidationResult(False, MSG_OUTPUT_IS_DIR.format(name=name, path=path))
    for parent in path.resolve().parents:
        if parent.exists():
            if not parent.is_dir():
                return ValidationResult(False, MSG_OUTPUT_PARENT.format(name=name, path=path))
            break
    return OK


def validate_positive_int(value: object, *, name: str) -> ValidationResult:
    try:
        number = int(str(value))
    except (TypeError, ValueError):
        return ValidationResult(False, MSG_NOT_INTEGER.format(name=name, value=value))
    if number < 1:
        return ValidationResult(False, MSG_NOT_POSITIVE.format(name=name, value=value))
    return OK


def validate_positive_float(value: object, *, name: str) -> ValidationResult:
    try:
        number = float(str(value))
    except (TypeError, ValueError):
        return ValidationResult(False, MSG_NOT_NUMBER.format(name=name, value=value))
    if not number > 0 or number == float("inf"):
        return ValidationResult(False, MSG_NOT_POSITIVE.format(name=name, value=value))
    return OK


def parse_size(text: str) -> tuple[int, int]:
    """Convierte "WxH" en (ancho, alto); usar tras validate_size."""
    match = _SIZE_RE.match(text or "")
    if not match:
        raise InvalidArgumentError(f"Tamano invalido: {text!r}.")
    return int(match.group(1)), int(match.group(2))


def validate_size(text: str | None, *, name: str) -> ValidationResult:
    match = _SIZE_RE.match(text or "")
    if not match or int(match.group(1)) < 1 or int(match.group(2)) < 1:
        return ValidationResult(False, MSG_BAD_SIZE.format(name=name, value=text))
    return OK


def validate_document(path: Path, model: type[BaseModel], *, name: str) -> ValidationResult:
    """
    Valida un documento JSON contra su modelo pydantic.

    Nota:
    - Solo valida el esquema; las rutas que el documento referencia se
      resuelven al cargarlo.
    """
    found = validate_input_file(path, name=name)
    if not found.ok:
        return found
    try:
        model.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first.get("loc", ())) or "document"
        return ValidationResult(False, MSG_BAD_DOCUMENT.format(name=name, path=path, detail=f"{where}: {first['msg']}"))
    except (OSError, UnicodeDecodeError) as exc:
        return ValidationResult(False, MSG_BAD_DOCUMENT.format(name=name, path=path, detail=exc))
    return OK
