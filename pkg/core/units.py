"""
Modulo de conversion de longitudes con sufijo de unidad.

Responsabilidades:
- Interpretar textos como "2.6mm", "532 nm" o "10um"
- Expresar todas las longitudes internas en micrometros

Nota: Un numero sin sufijo solo se acepta si se indica default_unit.
"""
from __future__ import annotations

import math
import re
from typing import Final

from core.errors import InvalidArgumentError

# Factores a micrometros por sufijo aceptado.
MICROMETRES_PER_UNIT: Final[dict[str, float]] = {
    "nm": 1e-3,
    "um": 1.0,
    "µm": 1.0,
    "μm": 1.0,
    "mm": 1e3,
    "m": 1e6,
}

_LENGTH_RE: Final[re.Pattern[str]] = re.compile(
    r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-zA-Zµμ]*)\s*$"
)


def parse_length(text: str | float | int, *, default_unit: str | None = None) -> float:
    """
    Convierte una longitud con unidad explicita a micrometros.

    Args:
        text: Texto como "2.6mm" o un numero (requiere default_unit).
        default_unit: Unidad asumida cuando el texto no trae sufijo.

    Returns:
        Longitud en micrometros.

    Raises:
        InvalidArgumentError: Si el formato o la unidad no son validos.
    """
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        if default_unit is None:
            raise InvalidArgumentError(
                f"Longitud sin unidad: {text!r} (use sufijo nm/um/mm/m)."
            )
        value, unit = float(text), default_unit
    else:
        match = _LENGTH_RE.match(str(text or ""))
        if not match:
            raise InvalidArgumentError(f"Longitud invalida: {text!r}.")
        value = float(match.group(1))
        unit = match.group(2) or (default_unit or "")

    factor = MICROMETRES_PER_UNIT.get(unit)
    if factor is None:
        raise InvalidArgumentError(
            f"Unidad desconocida en {text!r}; se esperaba una de "
            f"{', '.join(sorted(MICROMETRES_PER_UNIT))}."
        )
    if not math.isfinite(value):
        raise InvalidArgumentError(f"Longitud no finita: {text!r}.")
    return value * factor


def parse_length_list(text: str, *, default_unit: str | None = None) -> tuple[float, ...]:
    """
    Convierte una lista separada por comas ("650,532,450nm") a micrometros.

    Un sufijo en el ultimo elemento aplica a los elementos sin sufijo.
    """
    parts = [p.strip() for p in (text or "").split(",") if p.strip()]
    if not parts:
        raise InvalidArgumentError("Lista de longitudes vacia.")

    tail = _LENGTH_RE.match(parts[-1])
    shared_unit = tail.group(2) if tail and tail.group(2) else default_unit
    return tuple(parse_length(p, default_unit=shared_unit) for p in parts)


def um_to_nm(value_um: float) -> float:
    return value_um * 1e3


def nm_to_um(value_nm: float) -> float:
    return value_nm * 1e-3


def mm_to_um(value_mm: float) -> float:
    return value_mm * 1e3


def um_to_mm(value_um: float) -> float:
    return value_um * 1e-3
