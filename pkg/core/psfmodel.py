"""
Modulo de mezclas gaussianas para la dispersion de la PSF.

Responsabilidades:
- Mezclas gaussianas 2D de covarianza diagonal (GaussianMixture2D) y su densidad
- Ajuste EM ponderado sobre muestras o rasters (semilla k-means++)
- Latentes gaussianos: transformacion afin, muestreo reparametrizado y KL
- Generacion determinista de M^2 desplazamientos por sigma-puntos

Unidades: desplazamientos y varianzas en pixeles (px, px^2).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Final, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import logsumexp
from sklearn.cluster import kmeans_plusplus

from core.errors import DimensionError, InsufficientSlotsError, InvalidArgumentError
from core.parallel import parallel_map
from core.propagate import PSFStack

logger = logging.getLogger(__name__)

VARIANCE_FLOOR: Final[float] = 1e-6
DEFAULT_COMPONENTS: Final[int] = 3
DEFAULT_KERNEL_SIDE: Final[int] = 3
LOG_TWO_PI: Final[float] = math.log(2.0 * math.pi)

# Orden del patron por componente: centro, +-x, +-y y diagonales.
_SIGMA_PATTERN: Final[tuple[tuple[int, int], ...]] = (
    (1, 0), (-1, 0), (0, 1), (0, -1),
    (1, 1), (-1, 1), (1, -1), (-1, -1),
)


class GaussianMixture2D(BaseModel):
    """Mezcla de K gaussianas 2D de covarianza diagonal."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    format_version: Literal[1] = 1
    k: int = Field(alias="K", ge=1)
    weights: tuple[float, ...]
    means: tuple[tuple[float, float], ...]
    variances: tuple[tuple[float, float], ...]
    wavelength_nm: float | None = None

    @model_validator(mode="after")
    def _check_mixture(self) -> GaussianMixture2D:
        if not len(self.weights) == len(self.means) == len(self.variances) == self.k:
            raise ValueError("weights, means y variances deben tener K entradas.")
        if any(w < 0 for w in self.weights):
            raise ValueError("Los pesos deben ser no negativos.")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError("Los pesos deben sumar 1 (+/- 1e-12).")
        if any(v <= 0 for pair in self.variances for v in pair):
            raise ValueError("Las varianzas deben ser positivas.")
        return self

    @classmethod
    def from_arrays(
        cls,
        weights: np.ndarray,
        means: np.ndarray,
        variances: np.ndarray,
        *,
        wavelength_nm: float | None = None,
    ) -> GaussianMixture2D:
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / math.fsum(weights)
        return cls(
            K=int(weights.size),
            weights=tuple(float(w) for w in weights),
            means=tuple((float(m[0]), float(m[1])) for m in np.asarray(means)),
            variances=tuple((float(v[0]), float(v[1])) for v in np.asarray(variances)),
            wavelength_nm=wavelength_nm,
        )

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.asarray(self.weights, dtype=np.float64),
            np.asarray(self.means, dtype=np.float64),
            np.asarray(self.variances, dtype=np.float64),
        )

    @property
    def mean(self) -> np.ndarray:
        weights, means, _ = self.arrays()
        return weights @ means

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2) + "\n"


@dataclass(frozen=True)
class EMResult:
    mixture: GaussianMixture2D
    log_likelihood: tuple[float, ...]
    iterations: int
    converged: bool
    warnings: tuple[str, ...] = dc_field(default=())
    # Indices de log_likelihood donde empieza un tramo tras una re-siembra.
    reseeded_at: tuple[int, ...] = ()

    def segments(self) -> list[tuple[float, ...]]:
        """Traza partida en tramos monotonos (uno mas que re-siembras)."""
        bounds = [0, *self.reseeded_at, len(self.log_likelihood)]
        return [self.log_likelihood[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


@dataclass(frozen=True)
class GaussianLatent:
    """Parametros (mu, log sigma^2) de un latente gaussiano diagonal."""

    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        log_var = np.atleast_1d(np.asarray(self.log_variance, dtype=np.float64))
        if mean.shape != log_var.shape:
            raise DimensionError(f"mean {mean.shape} y log_variance {log_var.shape} deben coincidir.")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(log_var))):
            raise InvalidArgumentError("El latente debe tener entradas finitas.")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_variance", log_var)

    @property
    def variance(self) -> np.ndarray:
        return np.exp(self.log_variance)


@dataclass(frozen=True)
class OffsetKernel:
    """M^2 desplazamientos (dx, dy) en px y sus pesos (suman 1)."""

    offsets: np.ndarray
    weights: np.ndarray
    m: int


@dataclass(frozen=True)
class OffsetField:
    """Desplazamientos por posicion: offsets (H, W, M^2, 2), weights (H, W, M^2)."""

    offsets: np.ndarray
    weights: np.ndarray
    m: int

    def __post_init__(self) -> None:
        n = self.m * self.m
        if self.offsets.ndim != 4 or self.offsets.shape[2:] != (n, 2):
            raise DimensionError(f"offsets debe tener forma (H, W, {n}, 2).")
        if self.weights.shape != self.offsets.shape[:3]:
            raise DimensionError("weights debe tener forma (H, W, M^2).")
        if not np.all(np.isfinite(self.offsets)) or np.any(self.weights < 0):
            raise InvalidArgumentError("Desplazamientos no finitos o pesos negativos.")

    @classmethod
    def uniform(cls, kernel: OffsetKernel, height: int, width: int) -> OffsetField:
        n = kernel.m * kernel.m
        return cls(
            offsets=np.broadcast_to(kernel.offsets, (height, width, n, 2)),
            weights=np.broadcast_to(kernel.weights, (height, width, n)),
            m=kernel.m,
        )


def _component_log_pdf(points: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """log N(x | mu_k, diag var_k) para cada punto y componente, forma (n, K)."""
    diff = points[:, None, :] - means[None, :, :]
    mahalanobis = np.sum(diff * diff / variances[None, :, :], axis=2)
    return -LOG_TWO_PI - 0.5 * np.sum(np.log(variances), axis=1)[None, :] - 0.5 * mahalanobis


def gmm_pdf(mixture: GaussianMixture2D, dp: np.ndarray | Sequence[float]) -> np.ndarray:
    """Densidad sum_k pi_k N(dp | mu_k, diag var_k); dp con forma (..., 2)."""
    points = np.asarray(dp, dtype=np.float64)
    if points.shape[-1] != 2:
        raise DimensionError(f"dp debe terminar en dimension 2, recibido {points.shape}.")
    weights, means, variances = mixture.arrays()
    flat = points.reshape(-1, 2)
    density = np.exp(_component_log_pdf(flat, means, variances)) @ weights
    return density.reshape(points.shape[:-1])


def _points_from_data(data: np.ndarray, density: bool) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(data, dtype=np.float64)
    if density:
        if arr.ndim != 2 or np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("El raster debe ser 2D, finito y no negativo.")
        h, w = arr.shape
        rows, cols = np.nonzero(arr)
        mass = arr[rows, cols]
        if mass.size == 0:
            raise InvalidArgumentError("El raster no tiene masa.")
        points = np.stack([cols - w // 2, rows - h // 2], axis=1).astype(np.float64)
        return points, mass / math.fsum(mass)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionError(f"Las muestras deben tener forma (n, 2), recibido {arr.shape}.")
    return arr, np.full(arr.shape[0], 1.0 / arr.shape[0])


def _weighted_variance(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    centre = weights @ points
    return np.maximum(weights @ (points - centre) ** 2, VARIANCE_FLOOR)


def fit_gmm_em(
    data: np.ndarray,
    k: int = DEFAULT_COMPONENTS,
    *,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int = 0,
    density: bool = False,
    wavelength_nm: float | None = None,
) -> EMResult:
    """
    Ajusta una mezcla de K gaussianas diagonales por EM ponderado.

    Args:
        data: Muestras (n, 2) o, con density=True, un raster no negativo cuyos
            pixeles son puntos (dx, dy) relativos al centro con peso = masa.
        k: Numero de componentes.
        tol: Mejora minima de log-verosimilitud para continuar.
        max_iter: Iteraciones maximas.
        seed: Semilla de la inicializacion k-means++ y de las re-siembras.
        density: Interpreta data como raster de densidad.
        wavelength_nm: Etiqueta opcional del resultado.

    Returns:
        EMResult con la mezcla y la traza completa de log-verosimilitud; cada
        re-siembra abre un tramo nuevo cuyo indice queda en reseeded_at.

    Raises:
        InvalidArgumentError: Si K < 1 o hay menos de K puntos de soporte distintos.
    """
    if k < 1:
        raise InvalidArgumentError(f"K debe ser >= 1 (recibido {k}).")
    points, weights = _points_from_data(data, density)
    if np.unique(points, axis=0).shape[0] < k:
        raise InvalidArgumentError(f"Los datos tienen menos de K = {k} puntos de soporte distintos.")

    rng = np.random.default_rng(seed)
    means, _ = kmeans_plusplus(points, n_clusters=k, sample_weight=weights, random_state=seed)
    means = means.astype(np.float64)
    global_var = _weighted_variance(points, weights)
    variances = np.tile(global_var, (k, 1))
    mix = np.full(k, 1.0 / k)

    reseeded = np.zeros(k, dtype=bool)
    trace: list[float] = []
    restarts: list[int] = []
    segment_start = 0
    notes: list[str] = []
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        log_joint = _component_log_pdf(points, means, variances) + np.log(np.maximum(mix, 1e-300))[None, :]
        log_norm = logsumexp(log_joint, axis=1)
        ll = float(weights @ log_norm)
        if len(trace) > segment_start and ll - trace[-1] < tol:
            trace.append(ll)
            converged = True
            break
        trace.append(ll)

        resp = np.exp(log_joint - log_norm[:, None]) * weights[:, None]
        mass = resp.sum(axis=0)
        reseed_now = False
        for comp in range(k):
            if mass[comp] > 0:
                means[comp] = resp[:, comp] @ points / mass[comp]
                variances[comp] = resp[:, comp] @ (points - means[comp]) ** 2 / mass[comp]
            degenerate = mass[comp] <= 0 or np.any(variances[comp] < VARIANCE_FLOOR)
            if not degenerate:
                continue
            if not reseeded[comp]:
                reseeded[comp] = True
                reseed_now = True
                means[comp] = points[rng.choice(points.shape[0], p=weights)]
                variances[comp] = global_var
                mass[comp] = 1.0 / k
                logger.info("Componente %d degenerada; se re-siembra.", comp)
            else:
                variances[comp] = np.maximum(variances[comp], VARIANCE_FLOOR)
                message = f"Varianza de la componente {comp} acotada al piso {VARIANCE_FLOOR:g} px^2."
                logger.warning(message)
                notes.append(message)
        mix = mass / mass.sum()
        if reseed_now:
            # La monotonia solo vale dentro de cada tramo.
            segment_start = len(trace)
            restarts.append(segment_start)

    mixture = GaussianMixture2D.from_arrays(mix, means, variances, wavelength_nm=wavelength_nm)
    return EMResult(
        mixture=mixture,
        log_likelihood=tuple(trace),
        iterations=iterations,
        converged=converged,
        warnings=tuple(notes),
        reseeded_at=tuple(restarts),
    )


def fit_psf_stack(
    stack: PSFStack,
    k: int = DEFAULT_COMPONENTS,
    *,
    tol: float = 1e-8,
    max_iter: int = 500,
    seed: int = 0,
    threads: int = 1,
) -> tuple[EMResult, ...]:
    """Una mezcla por longitud de onda del stack, en paralelo y en orden de entrada."""

    def _fit(index: int) -> EMResult:
        return fit_gmm_em(
            stack.psfs[index],
            k,
            tol=tol,
            max_iter=max_iter,
            seed=seed,
            density=True,
            wavelength_nm=stack.wavelengths_nm[index],
        )

    return tuple(parallel_map(_fit, range(len(stack.wavelengths_nm)), threads=threads))


def meg_transform(latent: GaussianLatent, a: np.ndarray | float, b: np.ndarray | float) -> GaussianLatent:
    """
    Transformacion afin de un latente gaussiano: N(a*mu + b, a^2 * sigma^2).

    Raises:
        InvalidArgumentError: Si a o b no son finitos o a tiene ceros.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidArgumentError("a y b deben ser finitos.")
    if np.any(a == 0):
        raise InvalidArgumentError("a = 0 colapsa la varianza; no hay log-varianza finita.")
    return GaussianLatent(
        mean=a * latent.mean + b,
        log_variance=latent.log_variance + 2.0 * np.log(np.abs(a)),
    )


def reparameterize(latent: GaussianLatent, rng: np.random.Generator, n: int) -> np.ndarray:
    """Muestras z = mu + sigma * eps, forma (n, d)."""
    eps = rng.standard_normal((n,) + latent.mean.shape)
    return latent.mean + np.exp(0.5 * latent.log_variance) * eps


def kl_to_standard_normal(latent: GaussianLatent) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) sumada sobre dimensiones."""
    lv = latent.log_variance
    terms = 0.5 * (np.expm1(lv) - lv + latent.mean**2)
    return float(math.fsum(terms.ravel()))


def _allocate_slots(weights: np.ndarray, slots: int) -> np.ndarray:
    """Reparto por mayor resto; empates a favor del indice menor."""
    quotas = weights * slots
    counts = np.floor(quotas).astype(np.int64)
    remainder = slots - int(counts.sum())
    order = sorted(range(weights.size), key=lambda idx: (-(quotas[idx] - counts[idx]), idx))
    for idx in order[:remainder]:
        counts[idx] += 1
    return counts


def _sigma_points(mean: np.ndarray, sigma: np.ndarray, count: int, dilation: int) -> np.ndarray:
    points = [mean.copy()]
    ring = 1
    while len(points) < count:
        scale = dilation * ring
        for sx, sy in _SIGMA_PATTERN:
            if len(points) == count:
                break
            points.append(mean + scale * np.array([sx * sigma[0], sy * sigma[1]]))
        ring += 1
    return np.asarray(points[:count])


def offsets_from_mixture(mixture: GaussianMixture2D, m: int = DEFAULT_KERNEL_SIDE) -> OffsetKernel:
    """
    Genera M^2 desplazamientos deterministas a partir de la mezcla.

    Cada componente recibe casillas en proporcion a pi_k; su patron se
    escala por (k mod 3) + 1. Los pesos son pi_k * N(punto | componente k)
    renormalizados a suma 1.

    Raises:
        InsufficientSlotsError: Si M^2 < K.
    """
    if m < 1:
        raise InvalidArgumentError(f"M debe ser >= 1 (recibido {m}).")
    slots = m * m
    if slots < mixture.k:
        raise InsufficientSlotsError(f"M^2 = {slots} casillas no alcanzan para K = {mixture.k} componentes.")

    weights, means, variances = mixture.arrays()
    counts = _allocate_slots(weights, slots)
    offsets: list[np.ndarray] = []
    masses: list[np.ndarray] = []
    for comp in range(mixture.k):
        if counts[comp] == 0:
            continue
        pts = _sigma_points(means[comp], np.sqrt(variances[comp]), int(counts[comp]), comp % 3 + 1)
        log_pdf = _component_log_pdf(pts, means[comp : comp + 1], variances[comp : comp + 1])[:, 0]
        offsets.append(pts)
        masses.append(weights[comp] * np.exp(log_pdf))

    all_offsets = np.concatenate(offsets)
    all_mass = np.concatenate(masses)
    return OffsetKernel(offsets=all_offsets, weights=all_mass / math.fsum(all_mass), m=m)


def load_mixtures(path: str | Path) -> tuple[GaussianMixture2D, ...]:
    """Lee un documento con una mezcla o una lista {"mixtures": [...]}."""
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    items = document.get("mixtures", [document]) if isinstance(document, dict) else document
    return tuple(GaussianMixture2D.model_validate(item) for item in items)
