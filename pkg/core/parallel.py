"""
Modulo de mapeo paralelo determinista.

Responsabilidades:
- Ejecutar funciones puras sobre una secuencia con un pool de hilos
- Devolver resultados en el orden de entrada, sin importar el numero de hilos
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Final, Iterable, TypeVar

from core.errors import InvalidArgumentError

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV: Final[str] = "METASCOPE_THREADS"


def resolve_threads(value: int | str | None = None) -> int:
    """
    Resuelve el numero de hilos: argumento explicito, luego METASCOPE_THREADS, luego 1.

    Raises:
        InvalidArgumentError: Si el valor no es un entero positivo.
    """
    raw = value if value is not None else os.getenv(THREADS_ENV, "1")
    try:
        threads = int(raw)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"Numero de hilos invalido: {raw!r}.") from exc
    if threads < 1:
        raise InvalidArgumentError(f"El numero de hilos debe ser >= 1 (recibido {threads}).")
    return threads


def parallel_map(fn: Callable[[T], R], items: Iterable[T], *, threads: int = 1) -> list[R]:
    """
    Aplica fn a cada elemento y devuelve la lista en el orden de entrada.

    Con threads == 1 se ejecuta en el hilo actual.
    """
    work = list(items)
    if threads <= 1 or len(work) <= 1:
        return [fn(item) for item in work]
    with ThreadPoolExecutor(max_workers=min(threads, len(work))) as pool:
        return list(pool.map(fn, work))
