"""
Configuración para entorno de producción (ejecuciones por lotes).

Extiende la configuración base y ajusta parámetros de producción.
"""
import os

from config.settings.base import *  # noqa: F401, F403
from config.settings.base import LOGGING

# Deshabilita modo debug para producción.
DEBUG = False

# En lotes largos solo interesan advertencias, salvo que se pida otro nivel.
_PROD_LEVEL = os.getenv("METASCOPE_LOG_LEVEL", "WARNING").upper()
for _logger in LOGGING["loggers"].values():
    _logger["level"] = _PROD_LEVEL
