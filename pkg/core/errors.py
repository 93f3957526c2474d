"""
Modulo de errores de dominio del toolkit.

Responsabilidades:
- Nombrar cada categoria de fallo que las operaciones numericas reportan
- Permitir a la capa de comandos distinguir validacion de ejecucion

Nota: Todas las clases heredan de ValueError salvo DatasetError, que
representa una falla de ejecucion (RuntimeError).
"""
from __future__ import annotations


class InvalidArgumentError(ValueError):
    """Argumento fuera de dominio (longitudes no positivas, rejillas vacias)."""


class UnderSampledError(ValueError):
    """La rejilla no resuelve la mascara de fase de la lente."""


class AliasingError(ValueError):
    """La propagacion por funcion de transferencia viola el criterio de muestreo."""


class OutOfBandError(ValueError):
    """Longitud de onda fuera de la banda de diseno acromatica."""


class OutOfModelError(ValueError):
    """Angulo de campo fuera del rango valido del modelo eta."""


class DetectionError(ValueError):
    """No se detecto la region circular expuesta en la imagen blanca."""


class DimensionError(ValueError):
    """Formas de operandos inconsistentes."""


class ConfigurationError(ValueError):
    """Configuracion incompleta o contradictoria."""


class InsufficientSlotsError(ValueError):
    """Hay menos posiciones de offset (M^2) que componentes de la mezcla."""


class DatasetError(RuntimeError):
    """La sintesis del dataset no produjo ninguna entrada valida."""
