"""
Modulo de correccion determinista informada por la optica.

Responsabilidades:
- Inversa analitica de los terminos de intensidad (Y, T, ganancia)
- Deconvolucion de Wiener por canal
- Paso directo del ajuste de intensidad por atencion (canal y espacial)
  con pesos externos (WeightBundle)
- Agregacion por desplazamientos con muestreo bilineal
- Pipeline completo con reporte de PSNR por etapa

Convenciones: los mapas de caracteristicas son arreglos (C, H, W); las
convoluciones son correlaciones 2D "same" con relleno de ceros, como en
las capas convolucionales.

Las PSFs viven en el marco del raster (origen en su centro). La agregacion
alinea cada canal con los desplazamientos de su mezcla y Wiener deshace solo
la forma del kernel, tomando su centroide como origen.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Final, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import fft as sp_fft
from scipy.signal import correlate2d
from scipy.special import expit

from core.degrade import DegradeConfig, psf_centroid, raster_centre
from core.errors import DimensionError, InvalidArgumentError
from core.images import ImageTensor
from core.metrics import psnr
from core.parallel import parallel_map
from core.psfmodel import GaussianMixture2D, OffsetField, OffsetKernel, offsets_from_mixture
from core.raster_file import read_raster, write_raster

logger = logging.getLogger(__name__)

DEFAULT_EPSILON_FLOOR: Final[float] = 1e-3
DEFAULT_SNR: Final[float] = 100.0
DEFAULT_WEIGHT_SEED: Final[int] = 20240917
KIND_WEIGHT_BUNDLE: Final[str] = "weight_bundle"
WEIGHT_NAMES: Final[tuple[str, ...]] = ("enc_fc", "enc_conv", "proj_fc", "proj_conv", "oia_conv1", "oia_conv2")


@dataclass(frozen=True)
class WeightBundle:
    """
    Pesos del ajuste de intensidad.

    Formas: enc_fc (C, L), enc_conv (1, 3, k, k), proj_fc (C, C),
    proj_conv (1, 1, k, k), oia_conv1 y oia_conv2 (C, C, k, k).
    """

    enc_fc: np.ndarray
    enc_conv: np.ndarray
    proj_fc: np.ndarray
    proj_conv: np.ndarray
    oia_conv1: np.ndarray
    oia_conv2: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        for name in WEIGHT_NAMES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} contiene valores no finitos.")
            object.__setattr__(self, name, arr)

        c, _ = self._expect("enc_fc", 2)
        self._expect("proj_fc", 2, (c, c))
        enc_k = self._expect("enc_conv", 4)
        if enc_k[:2] != (1, 3):
            raise DimensionError(f"enc_conv debe tener forma (1, 3, k, k), recibido {enc_k}.")
        proj_k = self._expect("proj_conv", 4)
        if proj_k[:2] != (1, 1):
            raise DimensionError(f"proj_conv debe tener forma (1, 1, k, k), recibido {proj_k}.")
        for name in ("oia_conv1", "oia_conv2"):
            shape = self._expect(name, 4)
            if shape[:2] != (c, c):
                raise DimensionError(f"{name} debe tener forma ({c}, {c}, k, k), recibido {shape}.")
        for name in ("enc_conv", "proj_conv", "oia_conv1", "oia_conv2"):
            kh, kw = getattr(self, name).shape[2:]
            if kh != kw or kh % 2 == 0:
                raise DimensionError(f"{name} requiere un kernel cuadrado impar, recibido {kh}x{kw}.")

    def _expect(self, name: str, ndim: int, shape: tuple[int, ...] | None = None) -> tuple[int, ...]:
        actual = getattr(self, name).shape
        if len(actual) != ndim or (shape is not None and actual != shape):
            raise DimensionError(f"{name} tiene forma {actual}; se esperaba {shape or f'{ndim} dimensiones'}.")
        return actual

    @property
    def channels(self) -> int:
        return int(self.enc_fc.shape[0])

    @property
    def wavelengths(self) -> int:
        return int(self.enc_fc.shape[1])

    @classmethod
    def random(
        cls,
        channels: int,
        wavelengths: int,
        *,
        kernel: int = 3,
        seed: int = DEFAULT_WEIGHT_SEED,
        scale: float = 0.1,
    ) -> WeightBundle:
        rng = np.random.default_rng(seed)
        return cls(
            enc_fc=rng.normal(0.0, scale, (channels, wavelengths)),
            enc_conv=rng.normal(0.0, scale, (1, 3, kernel, kernel)),
            proj_fc=rng.normal(0.0, scale, (channels, channels)),
            proj_conv=rng.normal(0.0, scale, (1, 1, kernel, kernel)),
            oia_conv1=rng.normal(0.0, scale, (channels, channels, kernel, kernel)),
            oia_conv2=rng.normal(0.0, scale, (channels, channels, kernel, kernel)),
            seed=seed,
        )


def write_weight_bundle(path: str | Path, bundle: WeightBundle) -> Path:
    return write_raster(
        path,
        KIND_WEIGHT_BUNDLE,
        {name: getattr(bundle, name) for name in WEIGHT_NAMES},
        {"seed": bundle.seed, "provenance": "random" if bundle.seed is not None else "external"},
    )


def read_weight_bundle(path: str | Path) -> WeightBundle:
    header, arrays = read_raster(path, expected_kind=KIND_WEIGHT_BUNDLE)
    missing = [name for name in WEIGHT_NAMES if name not in arrays]
    if missing:
        raise DimensionError(f"Faltan pesos en el archivo: {', '.join(missing)}.")
    return WeightBundle(**{name: arrays[name] for name in WEIGHT_NAMES}, seed=header.get("seed"))


def prior_inverse_correct(
    degraded: ImageTensor,
    cfg: DegradeConfig,
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR,
) -> ImageTensor:
    """
    Invierte los terminos de intensidad: divide por max(Y, eps) y por T * ganancia.

    No invierte el desenfoque. El resultado se recorta a [0, 1].
    """
    if epsilon_floor <= 0:
        raise InvalidArgumentError(f"epsilon_floor debe ser positivo (recibido {epsilon_floor}).")
    if degraded.channels != 3:
        raise DimensionError(f"Se esperan 3 canales (recibido {degraded.channels}).")
    values = degraded.values.astype(np.float64)
    maps = cfg.spatial_maps(degraded.height, degraded.width)
    out = np.empty_like(values)
    for index in range(3):
        plane = values[index] / cfg.channel_scale(index)
        if maps is not None:
            plane = plane / np.maximum(maps[index], epsilon_floor)
        out[index] = plane
    return ImageTensor(np.clip(out, 0.0, 1.0), "linear")


def _transfer(psf: np.ndarray, shape: tuple[int, int], origin: tuple[int, int]) -> np.ndarray:
    kernel = np.zeros(shape, dtype=np.float64)
    kernel[: psf.shape[0], : psf.shape[1]] = psf
    kernel = np.roll(kernel, (-origin[0], -origin[1]), axis=(0, 1))
    return sp_fft.fft2(kernel)


def wiener_deconvolve(
    channel: np.ndarray,
    psf: np.ndarray,
    snr: float,
    *,
    origin: tuple[int, int] | None = None,
    pad: int = 0,
) -> np.ndarray:
    """
    Filtro de Wiener H* / (|H|^2 + 1/snr) en frecuencia.

    Args:
        channel: Plano 2D.
        psf: Kernel de suma unitaria.
        snr: Relacion senal/ruido (> 0; admite infinito).
        origin: (fila, columna) del origen del kernel; por defecto el centro.
        pad: Relleno por reflexion en cada borde antes de filtrar.
    """
    if not snr > 0:
        raise InvalidArgumentError(f"snr debe ser positivo (recibido {snr}).")
    channel = np.asarray(channel, dtype=np.float64)
    psf = np.asarray(psf, dtype=np.float64)
    if channel.ndim != 2 or psf.ndim != 2:
        raise DimensionError("wiener_deconvolve espera canal y PSF 2D.")
    padded = np.pad(channel, pad, mode="reflect") if pad > 0 else channel
    if psf.shape[0] > padded.shape[0] or psf.shape[1] > padded.shape[1]:
        raise DimensionError(f"La PSF {psf.shape} excede el canal {padded.shape}.")

    origin = origin if origin is not None else raster_centre(psf)
    transfer = _transfer(psf, padded.shape, origin)
    inverse_snr = 0.0 if math.isinf(snr) else 1.0 / snr
    spectrum = sp_fft.fft2(padded) * np.conj(transfer) / (np.abs(transfer) ** 2 + inverse_snr)
    out = sp_fft.ifft2(spectrum).real
    if pad > 0:
        out = out[pad:-pad, pad:-pad]
    return out


def _conv_same(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Correlacion multicanal: x (Cin, H, W), weights (Cout, Cin, k, k) -> (Cout, H, W)."""
    c_out, c_in = weights.shape[:2]
    if x.shape[0] != c_in:
        raise DimensionError(f"La entrada tiene {x.shape[0]} canales; el kernel espera {c_in}.")
    out = np.zeros((c_out,) + x.shape[1:], dtype=np.float64)
    for o in range(c_out):
        for i in range(c_in):
            out[o] += correlate2d(x[i], weights[o, i], mode="same", boundary="fill", fillvalue=0.0)
    return out


def channel_attention(x: np.ndarray, efficiency: np.ndarray, bundle: WeightBundle) -> np.ndarray:
    """Sigmoid(proj_fc (Mean_sp(X) + enc_fc T)), forma (C,)."""
    embedding = bundle.enc_fc @ efficiency
    return expit(bundle.proj_fc @ (x.mean(axis=(1, 2)) + embedding))


def spatial_attention(x: np.ndarray, spatial_stack: np.ndarray, bundle: WeightBundle) -> np.ndarray:
    """Sigmoid(proj_conv(Mean_ch(X) + enc_conv(Y, Cx, Cy))), forma (H, W)."""
    embedding = _conv_same(spatial_stack, bundle.enc_conv)
    return expit(_conv_same(x.mean(axis=0, keepdims=True) + embedding, bundle.proj_conv))[0]


def oia_compose(
    x: np.ndarray,
    attn_ch: np.ndarray,
    attn_sp: np.ndarray,
    bundle: WeightBundle,
) -> np.ndarray:
    """Conv2(Attn_sp * Conv1(Attn_ch * X)) + X."""
    inner = _conv_same(attn_ch[:, None, None] * x, bundle.oia_conv1)
    return _conv_same(attn_sp[None] * inner, bundle.oia_conv2) + x


def oia_forward(
    x: np.ndarray,
    efficiency: np.ndarray | Sequence[float],
    spatial_stack: np.ndarray,
    bundle: WeightBundle,
) -> np.ndarray:
    """
    Ajuste de intensidad con embebidos opticos.

    Args:
        x: Mapa de caracteristicas (C, H, W).
        efficiency: Vector T de longitud L.
        spatial_stack: Pila (Y, Cx, Cy) de forma (3, H, W).
        bundle: Pesos con C canales y L longitudes de onda.

    Raises:
        DimensionError: Nombrando el operando con forma inconsistente.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(efficiency, dtype=np.float64)
    stack = np.asarray(spatial_stack, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != bundle.channels:
        raise DimensionError(f"X tiene forma {x.shape}; se esperaban {bundle.channels} canales.")
    if t.shape != (bundle.wavelengths,):
        raise DimensionError(f"T tiene forma {t.shape}; se esperaba ({bundle.wavelengths},).")
    if stack.shape != (3,) + x.shape[1:]:
        raise DimensionError(f"Y_stack tiene forma {stack.shape}; se esperaba {(3,) + x.shape[1:]}.")
    attn_ch = channel_attention(x, t, bundle)
    attn_sp = spatial_attention(x, stack, bundle)
    return oia_compose(x, attn_ch, attn_sp, bundle)


def occ_aggregate(x: np.ndarray, offsets: OffsetField) -> np.ndarray:
    """
    X_occ(p) = sum_i w_i(p) X(p + dp_i(p)) con muestreo bilineal y ceros fuera.

    Los desplazamientos son (dx, dy) en pixeles.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError(f"X debe ser (C, H, W), recibido {x.shape}.")
    c, h, w = x.shape
    if offsets.offsets.shape[:2] != (h, w):
        raise DimensionError(f"El campo de desplazamientos {offsets.offsets.shape[:2]} no cubre X {(h, w)}.")

    rows, cols = np.mgrid[0:h, 0:w]
    out = np.zeros_like(x)
    for i in range(offsets.offsets.shape[2]):
        sx = cols + offsets.offsets[:, :, i, 0]
        sy = rows + offsets.offsets[:, :, i, 1]
        x0 = np.floor(sx).astype(np.int64)
        y0 = np.floor(sy).astype(np.int64)
        fx = sx - x0
        fy = sy - y0
        sample = np.zeros_like(x)
        for dy, dx, weight in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx), (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            yy = y0 + dy
            xx = x0 + dx
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            gathered = np.zeros_like(x)
            gathered[:, valid] = x[:, yy[valid], xx[valid]]
            sample += weight[None] * gathered
        out += offsets.weights[None, :, :, i] * sample
    return out


def effective_kernel(psf: np.ndarray, kernel: OffsetKernel) -> np.ndarray:
    """PSF vista tras la agregacion por desplazamientos, renormalizada a suma 1."""
    field = OffsetField.uniform(kernel, *psf.shape)
    aggregated = occ_aggregate(psf[None], field)[0]
    aggregated = np.clip(aggregated, 0.0, None)
    return aggregated / aggregated.sum()


class StageReport(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    name: str
    psnr_from_previous_db: float
    psnr_vs_reference_db: float | None = None
    delta_vs_reference_db: float | None = None


class CorrectionReport(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    format_version: int = 1
    stages: tuple[StageReport, ...]
    snr: float
    use_occ: bool


@dataclass(frozen=True)
class CorrectionResult:
    image: ImageTensor
    report: CorrectionReport


def correct_pipeline(
    degraded: ImageTensor,
    cfg: DegradeConfig,
    mixtures: Sequence[GaussianMixture2D],
    snr: float = DEFAULT_SNR,
    *,
    reference: ImageTensor | None = None,
    use_occ: bool = True,
    m: int = 3,
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR,
    threads: int = 1,
) -> CorrectionResult:
    """
    Inversa de priors -> agregacion por desplazamientos -> Wiener por canal.

    Args:
        degraded: Imagen degradada lineal de 3 canales.
        cfg: Configuracion de la degradacion.
        mixtures: Una mezcla por canal (R, G, B), ajustadas sobre las PSFs de cfg.
        snr: SNR del filtro de Wiener.
        reference: Imagen limpia opcional para el reporte.
        use_occ: Desactiva la agregacion (ablacion).
        m: Lado del patron de desplazamientos.
    """
    if len(mixtures) != 3:
        raise InvalidArgumentError(f"Se requieren 3 mezclas (una por canal), recibido {len(mixtures)}.")

    stages: list[tuple[str, ImageTensor]] = [("degraded", degraded)]
    current = prior_inverse_correct(degraded, cfg, epsilon_floor)
    stages.append(("prior_inverse", current))

    kernels = [offsets_from_mixture(mix, m) for mix in mixtures]
    if use_occ:
        h, w = current.height, current.width

        def _aggregate(index: int) -> np.ndarray:
            field = OffsetField.uniform(kernels[index], h, w)
            return occ_aggregate(current.values[index : index + 1].astype(np.float64), field)[0]

        current = ImageTensor(np.stack(parallel_map(_aggregate, range(3), threads=threads)), "linear")
        stages.append(("occ", current))

    def _deconvolve(index: int) -> np.ndarray:
        psf = cfg.channel_psf(index)
        kernel = effective_kernel(psf, kernels[index]) if use_occ else psf / psf.sum()
        pad = max(kernel.shape)
        return wiener_deconvolve(current.values[index], kernel, snr, origin=psf_centroid(kernel), pad=pad)

    restored = np.stack(parallel_map(_deconvolve, range(3), threads=threads))
    current = ImageTensor(np.clip(restored, 0.0, 1.0), "linear")
    stages.append(("wiener", current))

    reports = []
    for (_, previous), (name, image) in zip(stages, stages[1:]):
        between = psnr(previous.values, image.values)
        vs_ref = delta = None
        if reference is not None:
            vs_ref = psnr(image.values, reference.values)
            before = psnr(previous.values, reference.values)
            delta = vs_ref - before if math.isfinite(vs_ref) and math.isfinite(before) else None
        reports.append(
            StageReport(name=name, psnr_from_previous_db=between, psnr_vs_reference_db=vs_ref, delta_vs_reference_db=delta)
        )
        logger.info("Etapa %s: PSNR respecto a la anterior %.3f dB.", name, between)

    return CorrectionResult(image=current, report=CorrectionReport(stages=tuple(reports), snr=snr, use_occ=use_occ))
