"""
Configuración base de Django para el toolkit metascope.

Contiene configuraciones compartidas entre entornos (local y producción).
El proyecto se usa como anfitrión de comandos: no hay vistas, plantillas ni
base de datos.
"""
import os
from pathlib import Path

# IDs de Rastreabilidad:
# - REQ-CONFIG-001: Configuración base del proyecto Django.
# - REQ-CONFIG-002: Gestión de variables de entorno.
# - REQ-CONFIG-003: Valores por defecto de simulación, degradación y corrección.

# Define el directorio base del proyecto.
BASE_DIR = Path(__file__).resolve().parent.parent.parent


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name, str(default))
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"La variable de entorno {name} debe ser un entero (recibido {raw!r}).") from exc


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name, str(default))
    try:
        return float(raw)
    except ValueError as exc:
        raise ValueError(f"La variable de entorno {name} debe ser numérica (recibido {raw!r}).") from exc


# Sin sesiones ni firmas; Django solo exige un valor no vacío.
SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "metascope-cli")

DEBUG = os.getenv("DJANGO_DEBUG", "0") == "1"
ALLOWED_HOSTS: list[str] = []

# Define aplicaciones instaladas.
INSTALLED_APPS = [
    "metascope.apps.MetascopeConfig",
]

# Sin capa de persistencia.
DATABASES: dict = {}

# Configura idioma y zona horaria.
LANGUAGE_CODE = "es-mx"
TIME_ZONE = "America/Mexico_City"
USE_I18N = True
USE_TZ = True

# Parámetros del toolkit.
METASCOPE_THREADS = _env_int("METASCOPE_THREADS", 1)
METASCOPE_SEED = _env_int("METASCOPE_SEED", 0)
METASCOPE_GRID_SAMPLES = _env_int("METASCOPE_GRID_SAMPLES", 2048)
METASCOPE_GRID_PITCH_UM = _env_float("METASCOPE_GRID_PITCH_UM", 2.0)
METASCOPE_PSF_WINDOW = _env_int("METASCOPE_PSF_WINDOW", 64)
METASCOPE_SENSOR_PITCH_UM = _env_float("METASCOPE_SENSOR_PITCH_UM", 2.0)
METASCOPE_NOISE_SIGMA = _env_float("METASCOPE_NOISE_SIGMA", 0.01)
METASCOPE_NOISE_RADIUS_PX = _env_int("METASCOPE_NOISE_RADIUS_PX", 2)
METASCOPE_WIENER_SNR = _env_float("METASCOPE_WIENER_SNR", 100.0)
METASCOPE_LOG_LEVEL = os.getenv("METASCOPE_LOG_LEVEL", "INFO").upper()

# Configura logging: un único handler de consola sobre stderr.
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "plain": {"format": "%(asctime)s %(levelname)s %(name)s: %(message)s"},
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
            "formatter": "plain",
        },
    },
    "loggers": {
        "core": {"handlers": ["console"], "level": METASCOPE_LOG_LEVEL, "propagate": False},
        "metascope": {"handlers": ["console"], "level": METASCOPE_LOG_LEVEL, "propagate": False},
    },
}
