"""
Red CAD completa: bloque contextual -> cadena de atenciones cruzadas ->
clasificador de respuesta (entrenamiento) o tres cabezas de etiqueta temporal
(pre-entrenamiento)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from engine.optim import ParamSet, init_linear
from engine.tensor import (
    Tensor, add, concat_lastdim, cross_entropy, linear, no_grad, reshape,
    softmax_lastdim, tensor_mean,
)
from model.attention import CabConfig, CabWeights, cab_forward, init_cab
from model.contextual import ContextualConfig, apply_contextual_block, nonzero_token_fraction
from utils.errors import CheckpointError, ConfigError, ShapeError

VARIANTS = ('3CA', '2CA', '4CA')
INPUTS = ('Q', 'AQ', 'VQ', 'AVQ')

TRUNK_PREFIXES = ('proj.', 'cab')
ANSWER_HEAD = 'head.answer'
TIME_HEADS = ('head.time_audio', 'head.time_visual_t', 'head.time_visual_at')


@dataclass
class CadConfig:
    """Estructura del modelo (claves model.*) más dimensiones de entrada"""
    dim: int = 64
    heads: int = 4
    n_answers: int = 42
    n_time_labels: int = 60
    variant: str = '3CA'
    use_contextual: bool = True
    inputs: str = 'AVQ'
    positional: bool = False
    d_a: int = 16
    d_t: int = 16
    d_v: int = 16
    contextual: ContextualConfig = field(default_factory=ContextualConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"model.variant desconocido: {self.variant} (opciones: {', '.join(VARIANTS)})")
        if self.inputs not in INPUTS:
            raise ConfigError(f"model.inputs desconocido: {self.inputs} (opciones: {', '.join(INPUTS)})")
        if self.n_answers < 2:
            raise ConfigError(f"model.n_answers debe ser >= 2, recibido {self.n_answers}")
        if self.n_time_labels < 2:
            raise ConfigError(f"model.n_time_labels debe ser >= 2, recibido {self.n_time_labels}")
        self.cab = CabConfig(self.dim, self.heads)

    @property
    def n_blocks(self) -> int:
        return {'2CA': 2, '3CA': 3, '4CA': 4}[self.variant]


@dataclass
class FeatureTriple:
    """Lote de características: audio [B, T_a, d_a], texto [B, L_q, d_t], visual [B, T_v, s, c]"""
    a: Tensor
    t: Tensor
    v: Tensor

    def __post_init__(self):
        for name in ('a', 't', 'v'):
            value = getattr(self, name)
            if not isinstance(value, Tensor):
                setattr(self, name, Tensor(value))
        if self.a.ndim != 3 or self.t.ndim != 3 or self.v.ndim != 4:
            raise ShapeError("FeatureTriple espera a [B,T,d], t [B,L,d], v [B,T,s,c]",
                             self.a.shape, self.t.shape, self.v.shape)
        batches = {self.a.shape[0], self.t.shape[0], self.v.shape[0]}
        if len(batches) != 1:
            raise ShapeError("Tamaño de lote distinto entre modalidades", self.a.shape, self.t.shape, self.v.shape)

    @property
    def batch_size(self) -> int:
        return self.a.shape[0]

    def astype(self, dtype) -> 'FeatureTriple':
        return FeatureTriple(Tensor(self.a.data, dtype=dtype), Tensor(self.t.data, dtype=dtype),
                             Tensor(self.v.data, dtype=dtype))


@dataclass
class ChainOutputs:
    """Salidas de la cadena de CABs, cada una [B, L_q, d]"""
    a_t: Tensor
    v_t: Tensor
    v_at: Optional[Tensor] = None
    v_ta: Optional[Tensor] = None

    def blocks(self) -> List[Tensor]:
        return [x for x in (self.a_t, self.v_t, self.v_at, self.v_ta) if x is not None]


@dataclass
class LossRecord:
    """A_n (one-hot), P_n (distribución predicha) y L_avqa"""
    A_n: np.ndarray
    P_n: np.ndarray
    L_avqa: float


###########################################
# INICIALIZACIÓN Y NOMBRES
###########################################

def is_trunk_name(name: str) -> bool:
    return name.startswith(TRUNK_PREFIXES)


def trunk_names(params: ParamSet) -> List[str]:
    return [n for n in params.names() if is_trunk_name(n)]


def init_trunk(cfg: CadConfig, rng: np.random.Generator) -> ParamSet:
    """Proyecciones de modalidad y CABs; los nombres no dependen del grafo"""
    params = ParamSet()
    init_linear(params, 'proj.audio', cfg.d_a, cfg.dim, rng)
    init_linear(params, 'proj.text', cfg.d_t, cfg.dim, rng)
    init_linear(params, 'proj.visual', cfg.d_v, cfg.dim, rng)
    for index in range(1, cfg.n_blocks + 1):
        init_cab(params, f"cab{index}", cfg.cab, rng)
    return params


def init_answer_head(params: ParamSet, cfg: CadConfig, rng: np.random.Generator) -> None:
    fused = cfg.n_blocks * cfg.dim
    init_linear(params, ANSWER_HEAD, fused, cfg.n_answers, rng)


def init_time_heads(params: ParamSet, cfg: CadConfig, rng: np.random.Generator) -> None:
    heads = TIME_HEADS if cfg.variant != '2CA' else TIME_HEADS[:2]
    for prefix in heads:
        init_linear(params, prefix, cfg.dim, cfg.n_time_labels, rng)


def init_weights(cfg: CadConfig, rng: np.random.Generator, graph: str = 'answer') -> ParamSet:
    """
    Crea los pesos de un grafo completo

    Args:
        cfg: Configuración del modelo
        rng: Generador de inicialización
        graph: 'answer' (entrenamiento/evaluación) o 'pretrain'

    Returns:
        ParamSet: Tronco más las cabezas del grafo pedido
    """
    params = init_trunk(cfg, rng)
    if graph == 'answer':
        init_answer_head(params, cfg, rng)
    elif graph == 'pretrain':
        init_time_heads(params, cfg, rng)
    else:
        raise ConfigError(f"Grafo desconocido: {graph}")
    logging.debug(f"Pesos inicializados ({graph}): {len(params)} tensores, {params.count()} valores")
    return params


###########################################
# TRONCO COMPARTIDO
###########################################

def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    """Codificación posicional sinusoidal [length, dim]"""
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2, dtype=np.float64) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: dim // 2])
    return table


def _zero_missing(x: FeatureTriple, inputs: str) -> Tuple[Tensor, Tensor]:
    a = x.a if 'A' in inputs else Tensor(np.zeros_like(x.a.data), dtype=x.a.dtype)
    v = x.v if 'V' in inputs else Tensor(np.zeros_like(x.v.data), dtype=x.v.dtype)
    return a, v


def embed_inputs(x: FeatureTriple, w: ParamSet, cfg: CadConfig, rng: Optional[np.random.Generator],
                 training: bool, stats: Optional[Dict[str, float]] = None) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Bloque contextual más proyección de cada modalidad a model_dim

    Si se pasa `stats`, guarda en stats['visual_nonzero'] la fracción de tokens
    visuales no nulos que entran en los CABs.

    Returns:
        (audio [B, T_a, d], texto [B, L_q, d], visual [B, T_v*s, d])
    """
    a, v = _zero_missing(x, cfg.inputs)
    if a.shape[-1] != cfg.d_a or x.t.shape[-1] != cfg.d_t or v.shape[-1] != cfg.d_v:
        raise ShapeError(f"Dimensiones de entrada distintas de (d_a={cfg.d_a}, d_t={cfg.d_t}, d_v={cfg.d_v})",
                         a.shape, x.t.shape, v.shape)
    if cfg.use_contextual:
        v = apply_contextual_block(v, cfg.contextual, rng, training)
    if stats is not None:
        stats['visual_nonzero'] = nonzero_token_fraction(v)

    batch, frames, positions, channels = v.shape
    tokens = reshape(v, (batch, frames * positions, channels))

    a_e = linear(a, w['proj.audio.w'], w['proj.audio.b'])
    t_e = linear(x.t, w['proj.text.w'], w['proj.text.b'])
    v_e = linear(tokens, w['proj.visual.w'], w['proj.visual.b'])

    if cfg.positional:
        audio_pe = sinusoidal_encoding(a.shape[1], cfg.dim).astype(a_e.dtype)
        visual_pe = np.repeat(sinusoidal_encoding(frames, cfg.dim), positions, axis=0).astype(v_e.dtype)
        a_e = add(a_e, Tensor(audio_pe, dtype=a_e.dtype))
        v_e = add(v_e, Tensor(visual_pe, dtype=v_e.dtype))
    return a_e, t_e, v_e


def run_chain(x: FeatureTriple, w: ParamSet, cfg: CadConfig, rng: Optional[np.random.Generator],
              training: bool, stats: Optional[Dict[str, float]] = None) -> ChainOutputs:
    """
    CAB1(t; a, a) -> a_t, CAB2(t; v, v) -> v_t, CAB3(a_t; v, v) -> v_at
    y, en la variante 4CA, CAB4(v_t; a, a) -> v_ta
    """
    a_e, t_e, v_e = embed_inputs(x, w, cfg, rng, training, stats)
    heads = cfg.heads
    a_t = cab_forward(t_e, a_e, a_e, CabWeights.from_params(w, 'cab1'), heads)
    v_t = cab_forward(t_e, v_e, v_e, CabWeights.from_params(w, 'cab2'), heads)
    outputs = ChainOutputs(a_t=a_t, v_t=v_t)
    if cfg.n_blocks >= 3:
        outputs.v_at = cab_forward(a_t, v_e, v_e, CabWeights.from_params(w, 'cab3'), heads)
    if cfg.n_blocks >= 4:
        outputs.v_ta = cab_forward(v_t, a_e, a_e, CabWeights.from_params(w, 'cab4'), heads)
    return outputs


def pool(x: Tensor) -> Tensor:
    """Media sobre la secuencia: [B, L, d] -> [B, d]"""
    return tensor_mean(x, axis=1)


###########################################
# GRAFOS DE ENTRENAMIENTO Y PRE-ENTRENAMIENTO
###########################################

def forward_answer(x: FeatureTriple, w: ParamSet, cfg: CadConfig,
                   rng: Optional[np.random.Generator] = None, training: bool = False,
                   stats: Optional[Dict[str, float]] = None) -> Tensor:
    """
    Logits de respuesta [B, n_answers] a partir de la fusión de los CABs

    Args:
        x: Lote de características
        w: Pesos del grafo de respuesta
        cfg: Configuración del modelo
        rng: Generador del bloque contextual (solo necesario en entrenamiento)
        training: Activa el bloque contextual
        stats: Diccionario opcional de estadísticas del lote

    Returns:
        Tensor: Logits [B, n_answers]
    """
    chain = run_chain(x, w, cfg, rng, training, stats)
    fused = concat_lastdim([pool(block) for block in chain.blocks()])
    return linear(fused, w[f"{ANSWER_HEAD}.w"], w[f"{ANSWER_HEAD}.b"])


def forward_pretrain(x: FeatureTriple, w: ParamSet, cfg: CadConfig,
                     rng: Optional[np.random.Generator] = None,
                     training: bool = True,
                     stats: Optional[Dict[str, float]] = None) -> Tuple[Tensor, Tensor, Optional[Tensor]]:
    """
    Logits de etiqueta temporal: audio (sobre a_t), visual con consulta de
    texto (sobre v_t) y visual con consulta de audio atendido (sobre v_at)

    En la variante 2CA no existe v_at y el tercer elemento es None.
    """
    chain = run_chain(x, w, cfg, rng, training, stats)
    audio_logits = linear(pool(chain.a_t), w['head.time_audio.w'], w['head.time_audio.b'])
    vis_logits_t = linear(pool(chain.v_t), w['head.time_visual_t.w'], w['head.time_visual_t.b'])
    vis_logits_at = None
    if chain.v_at is not None:
        vis_logits_at = linear(pool(chain.v_at), w['head.time_visual_at.w'], w['head.time_visual_at.b'])
    return audio_logits, vis_logits_t, vis_logits_at


def avqa_loss(logits: Tensor, answer_labels) -> Tensor:
    """Pérdida AVQA: entropía cruzada con la respuesta one-hot, media del lote"""
    return cross_entropy(logits, answer_labels)


def loss_record(logits: Tensor, answer_labels) -> LossRecord:
    """Resumen numérico de la pérdida AVQA de un lote"""
    labels = np.asarray(answer_labels)
    with no_grad():
        probs = softmax_lastdim(logits).data
        loss = float(avqa_loss(logits, labels).data)
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(labels.size), labels] = 1.0
    return LossRecord(A_n=one_hot, P_n=probs, L_avqa=loss)


def alignment_loss(heads: Tuple[Tensor, Tensor, Optional[Tensor]], audio_label, visual_label) -> Tensor:
    """
    Suma de las tres entropías cruzadas del pre-entrenamiento

    CE(audio, etiqueta audio) + CE(visual_t, etiqueta visual) + CE(visual_at, etiqueta visual)
    """
    audio_logits, vis_logits_t, vis_logits_at = heads
    loss = add(cross_entropy(audio_logits, audio_label), cross_entropy(vis_logits_t, visual_label))
    if vis_logits_at is not None:
        loss = add(loss, cross_entropy(vis_logits_at, visual_label))
    return loss


def predict_answers(x: FeatureTriple, w: ParamSet, cfg: CadConfig) -> np.ndarray:
    """Argmax de la respuesta en modo inferencia"""
    with no_grad():
        logits = forward_answer(x, w, cfg, rng=None, training=False)
    return np.argmax(logits.data, axis=-1)


###########################################
# TRANSFERENCIA DESDE EL PRE-ENTRENAMIENTO
###########################################

def init_from_pretrained(w: ParamSet, ckpt: Mapping[str, np.ndarray]) -> ParamSet:
    """
    Copia el tronco (proyecciones y CABs) desde un checkpoint

    La cabeza de respuesta conserva su inicialización y las cabezas de
    pre-entrenamiento del checkpoint se descartan.

    Args:
        w: Pesos del grafo de respuesta recién inicializados
        ckpt: Arrays por nombre (checkpoint cargado o estado de un ParamSet)

    Returns:
        ParamSet: Nuevo conjunto con el tronco copiado

    Raises:
        CheckpointError: Si falta algún tensor del tronco o no coincide su forma
    """
    state = ckpt.state() if isinstance(ckpt, ParamSet) else ckpt
    result = ParamSet({name: Tensor(tensor.data.copy(), dtype=tensor.dtype) for name, tensor in w.items()})
    names = trunk_names(result)
    result.load_state(state, names)
    discarded = [n for n in state if not is_trunk_name(n)]
    logging.info(f"Tronco inicializado desde checkpoint: {len(names)} tensores copiados, {len(discarded)} descartados")
    return result
