"""
Bloque contextual: enmascarado espacial estocástico y sin parámetros de las
características visuales [B, t, s, c]
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from engine.tensor import Tensor, mul, no_grad, reduce_mean, sigmoid
from utils.errors import ContextualConfigError, ShapeError

SELECTOR_MODES = ('coin_then_mask', 'elementwise_pick')


@dataclass
class ContextualConfig:
    """Parámetros del bloque contextual (claves contextual.*)"""
    sample_frac: float = 0.8
    mask_frac: float = 0.9
    th_ratio: float = 0.9
    map_select_prob: float = 0.5
    selector_mode: str = 'coin_then_mask'
    route_per_frame: bool = False
    at_inference: bool = False

    def __post_init__(self):
        for name in ('sample_frac', 'mask_frac', 'th_ratio', 'map_select_prob'):
            value = getattr(self, name)
            if not 0.0 <= float(value) <= 1.0:
                raise ContextualConfigError(f"contextual.{name} debe estar en [0, 1], recibido {value}")
        if self.selector_mode not in SELECTOR_MODES:
            raise ContextualConfigError(
                f"contextual.selector_mode desconocido: {self.selector_mode} (opciones: {', '.join(SELECTOR_MODES)})"
            )


@dataclass
class ContextualMaps:
    """Mapas intermedios del bloque, todos [B, t, s]"""
    f_m: np.ndarray
    M: np.ndarray
    C_f: np.ndarray
    R: np.ndarray


def _check_visual(v: Tensor) -> None:
    if v.ndim != 4 or min(v.shape) < 1:
        raise ShapeError("Se esperaban características visuales [B, t, s, c]", v.shape)


def channel_mean(v: Tensor) -> Tensor:
    """f_m: media sobre el canal, [B, t, s]"""
    _check_visual(v)
    with no_grad():
        return reduce_mean(v, dim=-1)


def threshold_mask(f_m: Tensor, th_ratio: float = 0.9) -> Tensor:
    """
    M = 0 donde f_m > th y 1 en otro caso, con th = th_ratio * max por (lote, frame)

    Args:
        f_m: Mapa de medias [B, t, s]
        th_ratio: Fracción del máximo usada como umbral

    Returns:
        Tensor: Máscara binaria [B, t, s]
    """
    values = f_m.data
    th = th_ratio * values.max(axis=-1, keepdims=True)
    return Tensor(np.where(values > th, 0.0, 1.0), dtype=values.dtype)


def contextual_map(f_m: Tensor) -> Tensor:
    """C_f = sigmoid(f_m)"""
    with no_grad():
        return sigmoid(f_m)


def masked_count(s: int, mask_frac: float) -> int:
    """Número de posiciones que se anulan por slice: ceil(mask_frac * s)"""
    return min(s, int(math.ceil(mask_frac * s - 1e-9)))


def build_selector(M: Tensor, C_f: Tensor, cfg: ContextualConfig,
                   rng: np.random.Generator) -> Tensor:
    """
    Construye el selector R a partir de M o C_f y anula posiciones al azar

    En modo coin_then_mask se elige un único mapa base por pasada (C_f con
    probabilidad map_select_prob); en elementwise_pick la elección es por
    elemento. Después se anulan ceil(mask_frac * s) posiciones uniformes por
    slice (lote, frame).
    """
    if M.shape != C_f.shape:
        raise ShapeError("M y C_f deben tener la misma forma", M.shape, C_f.shape)
    if cfg.selector_mode == 'coin_then_mask':
        base = C_f.data if rng.random() < cfg.map_select_prob else M.data
    else:
        base = np.where(rng.random(M.shape) < cfg.map_select_prob, C_f.data, M.data)
    selector = np.array(base, dtype=M.dtype, copy=True)

    k = masked_count(M.shape[-1], cfg.mask_frac)
    if k > 0:
        order = np.argsort(rng.random(M.shape), axis=-1, kind='stable')[..., :k]
        np.put_along_axis(selector, order, 0.0, axis=-1)
    return Tensor(selector, dtype=M.dtype)


def contextual_maps(v: Tensor, cfg: ContextualConfig, rng: np.random.Generator) -> ContextualMaps:
    """Calcula f_m, M, C_f y R para un lote visual"""
    f_m = channel_mean(v)
    M = threshold_mask(f_m, cfg.th_ratio)
    C_f = contextual_map(f_m)
    R = build_selector(M, C_f, cfg, rng)
    return ContextualMaps(f_m=f_m.data, M=M.data, C_f=C_f.data, R=R.data)


def apply_contextual_block(v: Tensor, cfg: ContextualConfig, rng: Optional[np.random.Generator],
                           training: bool) -> Tensor:
    """
    Aplica el bloque contextual a un lote visual

    Fuera de entrenamiento (salvo at_inference) devuelve la entrada tal cual.
    En entrenamiento cada elemento del lote (o cada frame, con
    route_per_frame) pasa por el bloque con probabilidad sample_frac y se
    multiplica por R difundido sobre los canales.

    Args:
        v (Tensor): Características visuales [B, t, s, c]
        cfg (ContextualConfig): Configuración del bloque
        rng (np.random.Generator): Generador del bloque
        training (bool): Modo entrenamiento

    Returns:
        Tensor: Características visuales enmascaradas, misma forma
    """
    _check_visual(v)
    if not (training or cfg.at_inference):
        return v
    if rng is None:
        raise ContextualConfigError("El bloque contextual necesita un generador aleatorio")

    batch, frames = v.shape[0], v.shape[1]
    if cfg.route_per_frame:
        routed = rng.random((batch, frames)) < cfg.sample_frac
    else:
        routed = np.repeat((rng.random(batch) < cfg.sample_frac)[:, None], frames, axis=1)
    if not routed.any():
        return v

    maps = contextual_maps(v, cfg, rng)
    selector = np.where(routed[..., None], maps.R, 1.0).astype(v.dtype)
    logging.debug(f"Bloque contextual: {int(routed.sum())}/{routed.size} slices enrutados")
    return mul(v, Tensor(selector[..., None], dtype=v.dtype))


def nonzero_token_fraction(v) -> float:
    """Fracción de tokens (frame, posición) con algún canal distinto de cero"""
    data = v.data if isinstance(v, Tensor) else np.asarray(v)
    if data.size == 0:
        return 0.0
    return float(np.any(data != 0, axis=-1).mean())
