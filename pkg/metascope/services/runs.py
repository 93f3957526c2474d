"""
Configuración de ejecución y manifiesto de corrida.

Cada comando construye un RunConfig validado antes de trabajar y, al
terminar, escribe un manifiesto JSON junto a su salida principal (<salida>.run.json).
Queda fuera de los directorios de salida: el manifiesto incluye el tiempo
de pared y los árboles de salida deben ser idénticos byte a byte.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Final, Mapping

from core.storage import atomic_write_json

import metascope

logger = logging.getLogger(__name__)

RUN_MANIFEST_SUFFIX: Final[str] = ".run.json"
MANIFEST_FORMAT_VERSION: Final[int] = 1

# Distribuciones cuyas versiones se registran en el manifiesto.
TRACKED_DISTRIBUTIONS: Final[tuple[str, ...]] = (
    "Django",
    "numpy",
    "scipy",
    "scikit-image",
    "scikit-learn",
    "pillow",
    "opencv-python-headless",
    "pydantic",
)


@dataclass(frozen=True)
class RunConfig:
    """
    Parámetros resueltos de una ejecución de subcomando.

    inputs y outputs asocian el nombre de la opción con su ruta; la primera
    salida es la principal y determina dónde se escribe el manifiesto.
    """

    subcommand: str
    inputs: Mapping[str, Path]
    outputs: Mapping[str, Path]
    seed: int = 0
    threads: int = 1
    log_level: str = "INFO"
    argv: tuple[str, ...] = ()

    @property
    def primary_output(self) -> Path:
        return next(iter(self.outputs.values()))


@dataclass(frozen=True)
class StageResult:
    """Resultado de una etapa: artefactos escritos y resumen para stdout."""

    outputs: tuple[Path, ...]
    summary: str
    extra_hashes: Mapping[str, str] = field(default_factory=dict)


def manifest_path(run: RunConfig) -> Path:
    primary = run.primary_output
    return primary.with_name(primary.name + RUN_MANIFEST_SUFFIX)


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def library_versions() -> dict[str, str]:
    versions: dict[str, str] = {}
    for name in TRACKED_DISTRIBUTIONS:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def input_hashes(run: RunConfig) -> dict[str, str]:
    """SHA-256 de cada archivo de entrada (los directorios se omiten)."""
    return {name: file_sha256(path) for name, path in sorted(run.inputs.items()) if path.is_file()}


def write_run_manifest(run: RunConfig, result: StageResult, *, wall_time_s: float) -> Path:
    """
    Escribe el manifiesto de la corrida de forma atómica.

    Returns:
        Ruta del manifiesto escrito.
    """
    hashes = input_hashes(run)
    hashes.update(result.extra_hashes)
    document = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "toolkit_version": metascope.__version__,
        "libraries": library_versions(),
        "subcommand": run.subcommand,
        "argv": list(run.argv),
        "inputs": {name: str(path) for name, path in sorted(run.inputs.items())},
        "outputs": [str(p) for p in result.outputs],
        "config_hashes": hashes,
        "seed": run.seed,
        "threads": run.threads,
        "wall_time_s": round(wall_time_s, 6),
    }
    target = manifest_path(run)
    atomic_write_json(target, document)
    logger.info("Manifiesto de corrida escrito en %s.", target)
    return target
