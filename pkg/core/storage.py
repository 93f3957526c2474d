"""
Modulo de escritura atomica de artefactos.

Responsabilidades:
- Escribir archivos via temporal en el mismo directorio + os.replace
- Ensamblar directorios completos en un hermano temporal y renombrarlos
- Serializar JSON de forma canonica (bytes identicos para contenido igual)

Nota: Ninguna ruta final queda con contenido parcial si la escritura falla.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator

logger = logging.getLogger(__name__)


@contextmanager
def atomic_path(target: str | Path) -> Iterator[Path]:
    """
    Entrega una ruta temporal que se promueve a target al salir sin error.

    Args:
        target: Ruta final del archivo.

    Yields:
        Ruta temporal en el mismo directorio que target.
    """
    final = Path(target)
    final.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{final.name}.", suffix=".tmp", dir=final.parent)
    os.close(fd)
    tmp_path = Path(tmp_name)
    try:
        yield tmp_path
        os.replace(tmp_path, final)
    except BaseException:
        tmp_path.unlink(missing_ok=True)
        raise


def atomic_write_bytes(target: str | Path, payload: bytes) -> Path:
    with atomic_path(target) as tmp:
        tmp.write_bytes(payload)
    return Path(target)


def canonical_json(document: Any) -> str:
    """Serializa con llaves ordenadas, indentacion 2 y salto de linea final."""
    return json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write_json(target: str | Path, document: Any) -> Path:
    return atomic_write_bytes(target, canonical_json(document).encode("utf-8"))


@contextmanager
def atomic_directory(target: str | Path) -> Iterator[Path]:
    """
    Entrega un directorio temporal hermano que reemplaza a target al final.

    Si target ya existe se elimina justo antes del renombrado.
    """
    final = Path(target)
    final.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{final.name}.", suffix=".tmp", dir=final.parent))
    try:
        yield staging
        if final.exists():
            shutil.rmtree(final)
        os.replace(staging, final)
    except BaseException:
        logger.warning("Se descarta el directorio temporal %s.", staging)
        shutil.rmtree(staging, ignore_errors=True)
        raise
