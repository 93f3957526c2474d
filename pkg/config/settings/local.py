"""
Configuración para desarrollo local y para la suite de pruebas.

Extiende la configuración base con un formato de log que incluye el
hilo, útil al depurar etapas ejecutadas con --threads > 1.
"""
from config.settings.base import *  # noqa: F401, F403
from config.settings.base import LOGGING

# IDs de Rastreabilidad:
# - REQ-CONFIG-004: Configuración de entorno de desarrollo.

DEBUG = True

LOGGING["formatters"]["plain"]["format"] = "%(asctime)s %(levelname)s %(name)s [%(threadName)s]: %(message)s"
