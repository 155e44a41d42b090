"""
Pre-entrenamiento de alineamiento temporal fino audio-visual

Los streams se segmentan en cues con etiqueta temporal; se muestrean pares
positivos (misma cue) y negativos (cues distintas) y la red predice la
etiqueta temporal de audio y de visual con tres cabezas.
"""

import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from engine.optim import AdamState, ParamSet, adam_step
from engine.tensor import Tensor, backward, no_grad
from model.cad import CadConfig, FeatureTriple, alignment_loss, forward_pretrain
from synthetic.features import FeatureDims, PrototypeBank, generate_episode, sweep_spec
from utils.errors import SamplerError, TrainingDivergedError
from utils.helpers import derive_rng, hash_arrays, log_run_stats

HEAD_NAMES = ('audio', 'visual_t', 'visual_at')


@dataclass
class Cue:
    """Segmento de un stream con su etiqueta temporal"""
    modality: str
    time_label: int
    clip_index: int
    features: np.ndarray
    cues_per_clip: int = 10

    def __post_init__(self):
        if self.modality not in ('audio', 'visual'):
            raise SamplerError(f"Modalidad desconocida: {self.modality}")
        if self.clip_index != self.time_label // self.cues_per_clip:
            raise SamplerError(f"Cue {self.time_label} no pertenece al clip {self.clip_index}")

    @property
    def offset(self) -> int:
        return self.time_label - self.clip_index * self.cues_per_clip


@dataclass
class PairSample:
    audio_cue: Cue
    visual_cue: Cue
    query: Optional[np.ndarray]
    positive: bool

    def __post_init__(self):
        same = self.audio_cue.time_label == self.visual_cue.time_label
        if same != self.positive:
            raise SamplerError(
                f"Polaridad inconsistente: positivo={self.positive}, etiquetas "
                f"{self.audio_cue.time_label}/{self.visual_cue.time_label}"
            )


@dataclass
class SamplerConfig:
    pos_prob: float = 0.6
    n_time_labels: int = 60
    cues_per_clip: int = 10

    def __post_init__(self):
        if not 0.0 <= self.pos_prob <= 1.0:
            raise SamplerError(f"pretrain.pos_prob debe estar en [0, 1], recibido {self.pos_prob}")
        if self.cues_per_clip < 1:
            raise SamplerError(f"pretrain.cues_per_clip debe ser >= 1, recibido {self.cues_per_clip}")


@dataclass
class PretrainConfig:
    """Claves pretrain.*"""
    pos_prob: float = 0.6
    epochs: int = 10
    n_time_labels: int = 60
    cues_per_clip: int = 10
    pairs_per_epoch: int = 1024
    batch_size: int = 64
    n_streams: int = 16
    eval_streams: int = 4
    alignment_noise: float = 0.0

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(self.pos_prob, self.n_time_labels, self.cues_per_clip)


@dataclass
class QueryToggle:
    """Alterna entre la consulta del clip de audio y la del clip visual"""
    counter: int = 0

    def next_side(self) -> str:
        side = 'audio' if self.counter % 2 == 0 else 'visual'
        self.counter += 1
        return side


@dataclass
class PretrainStream:
    cues_a: List[Cue]
    cues_v: List[Cue]
    clip_queries: np.ndarray


@dataclass
class PretrainBatch:
    triple: FeatureTriple
    audio_labels: np.ndarray
    visual_labels: np.ndarray
    positive: np.ndarray


@dataclass
class PretrainResult:
    params: ParamSet
    history: pd.DataFrame
    held_out: Dict[str, float] = field(default_factory=dict)
    data_hash: str = ''

    @property
    def checkpoint(self) -> Dict[str, np.ndarray]:
        return self.params.state()


###########################################
# CUES, PARES Y CONSULTAS
###########################################

def segment_cues(stream_features: np.ndarray, n_cues: int, modality: str = 'audio',
                 cues_per_clip: int = 10) -> List[Cue]:
    """
    Divide un stream en n_cues segmentos contiguos sin solape

    Args:
        stream_features: Array [n_units, ...]
        n_cues: Número de cues
        modality: 'audio' o 'visual'
        cues_per_clip: Cues por clip (define clip_index)

    Returns:
        List[Cue]: Cues con etiquetas 0..n_cues-1

    Raises:
        SamplerError: Si la longitud no es divisible entre n_cues
    """
    length = len(stream_features)
    if n_cues < 1 or length % n_cues != 0:
        raise SamplerError(f"Longitud de stream {length} no divisible entre {n_cues} cues")
    size = length // n_cues
    return [
        Cue(modality=modality, time_label=label, clip_index=label // cues_per_clip,
            features=stream_features[label * size:(label + 1) * size], cues_per_clip=cues_per_clip)
        for label in range(n_cues)
    ]


def sample_pair(cues_a: Sequence[Cue], cues_v: Sequence[Cue], cfg: SamplerConfig,
                rng: np.random.Generator) -> PairSample:
    """
    Par positivo con probabilidad pos_prob (misma etiqueta) o negativo
    (dos etiquetas distintas sin reemplazo), ambos uniformes

    La consulta se deja vacía; la rellena select_query.
    """
    by_label_a = {c.time_label: c for c in cues_a}
    by_label_v = {c.time_label: c for c in cues_v}
    labels = sorted(set(by_label_a) & set(by_label_v))
    if not labels:
        raise SamplerError("No hay etiquetas temporales comunes entre audio y visual")

    if rng.random() < cfg.pos_prob:
        label = labels[int(rng.integers(len(labels)))]
        return PairSample(by_label_a[label], by_label_v[label], None, True)

    if len(labels) < 2:
        raise SamplerError("Un par negativo necesita al menos 2 etiquetas temporales")
    first, second = rng.choice(len(labels), size=2, replace=False)
    return PairSample(by_label_a[labels[int(first)]], by_label_v[labels[int(second)]], None, False)


def select_query(pair: PairSample, clip_queries: np.ndarray, toggle_state: QueryToggle) -> np.ndarray:
    """
    Consulta de pregunta para un par

    Positivo o negativo dentro de un clip: la consulta de ese clip. Negativo
    entre clips: alterna entre el clip del audio y el del visual.
    """
    audio_clip = pair.audio_cue.clip_index
    visual_clip = pair.visual_cue.clip_index
    if pair.positive or audio_clip == visual_clip:
        clip = audio_clip
    else:
        clip = audio_clip if toggle_state.next_side() == 'audio' else visual_clip
    if not 0 <= clip < len(clip_queries):
        raise SamplerError(f"Falta la consulta del clip {clip}")
    return clip_queries[clip]


class PairSampler:
    """
    Generador secuencial de pares: posee el generador aleatorio y el
    alternador de consultas
    """

    def __init__(self, streams: Sequence[PretrainStream], cfg: SamplerConfig, rng: np.random.Generator):
        if not streams:
            raise SamplerError("El muestreador necesita al menos un stream")
        self.streams = list(streams)
        self.cfg = cfg
        self.rng = rng
        self.toggle = QueryToggle()

    def next_pair(self) -> PairSample:
        stream = self.streams[int(self.rng.integers(len(self.streams)))]
        pair = sample_pair(stream.cues_a, stream.cues_v, self.cfg, self.rng)
        pair.query = select_query(pair, stream.clip_queries, self.toggle)
        return pair

    def next_batch(self, batch_size: int) -> PretrainBatch:
        """Lote con polaridades mezcladas"""
        pairs = [self.next_pair() for _ in range(batch_size)]
        return batch_from_pairs(pairs)


def batch_from_pairs(pairs: Sequence[PairSample]) -> PretrainBatch:
    audio = np.stack([p.audio_cue.features for p in pairs])
    visual = np.stack([p.visual_cue.features for p in pairs])
    query = np.stack([p.query for p in pairs])
    return PretrainBatch(
        triple=FeatureTriple(Tensor(audio), Tensor(query), Tensor(visual)),
        audio_labels=np.array([p.audio_cue.time_label for p in pairs], dtype=np.int64),
        visual_labels=np.array([p.visual_cue.time_label for p in pairs], dtype=np.int64),
        positive=np.array([p.positive for p in pairs], dtype=bool),
    )


def streams_hash(streams: Sequence[PretrainStream]) -> str:
    """Hash de contenido de los streams (cues de audio y visual y consultas)"""
    def arrays():
        for stream in streams:
            for cue in list(stream.cues_a) + list(stream.cues_v):
                yield cue.features
            yield stream.clip_queries
    return hash_arrays(arrays())


def build_pretrain_streams(bank: PrototypeBank, dims: FeatureDims, cfg: PretrainConfig,
                           n_streams: int, rng: np.random.Generator) -> List[PretrainStream]:
    """Streams de barrido (clase k en la cue k) segmentados en cues"""
    streams = []
    for _ in range(n_streams):
        seed = int(rng.integers(0, 2**63 - 1))
        spec = sweep_spec(cfg.n_time_labels, dims, cfg.alignment_noise, seed, cfg.cues_per_clip)
        episode = generate_episode(spec, bank, np.random.default_rng(seed))
        streams.append(PretrainStream(
            cues_a=segment_cues(episode.audio, cfg.n_time_labels, 'audio', cfg.cues_per_clip),
            cues_v=segment_cues(episode.visual, cfg.n_time_labels, 'visual', cfg.cues_per_clip),
            clip_queries=episode.clip_queries,
        ))
    return streams


###########################################
# BUCLE DE PRE-ENTRENAMIENTO
###########################################

def _head_hits(heads, audio_labels: np.ndarray, visual_labels: np.ndarray) -> List[Optional[int]]:
    targets = (audio_labels, visual_labels, visual_labels)
    hits = []
    for logits, target in zip(heads, targets):
        hits.append(None if logits is None else int((np.argmax(logits.data, axis=-1) == target).sum()))
    return hits


def evaluate_alignment(streams: Sequence[PretrainStream], params: ParamSet, model_cfg: CadConfig,
                       batch_size: int = 64) -> Dict[str, float]:
    """
    Precisión de las tres cabezas sobre todos los pares positivos (inferencia)

    Returns:
        Dict[str, float]: Precisión por cabeza ('audio', 'visual_t', 'visual_at')
    """
    toggle = QueryToggle()
    pairs = []
    for stream in streams:
        by_label_v = {c.time_label: c for c in stream.cues_v}
        for cue in stream.cues_a:
            if cue.time_label in by_label_v:
                pair = PairSample(cue, by_label_v[cue.time_label], None, True)
                pair.query = select_query(pair, stream.clip_queries, toggle)
                pairs.append(pair)

    correct = [0, 0, 0]
    for start in range(0, len(pairs), batch_size):
        batch = batch_from_pairs(pairs[start:start + batch_size])
        with no_grad():
            heads = forward_pretrain(batch.triple, params, model_cfg, rng=None, training=False)
        for i, hit in enumerate(_head_hits(heads, batch.audio_labels, batch.visual_labels)):
            if hit is not None:
                correct[i] += hit
    total = max(len(pairs), 1)
    results = {name: correct[i] / total for i, name in enumerate(HEAD_NAMES)}
    if model_cfg.n_blocks < 3:
        results.pop('visual_at')
    return results


def run_pretraining(streams: Sequence[PretrainStream], params: ParamSet, model_cfg: CadConfig,
                    cfg: PretrainConfig, seed: int, optimizer: Optional[AdamState] = None,
                    held_out: Optional[Sequence[PretrainStream]] = None) -> PretrainResult:
    """
    Optimiza la pérdida de alineamiento sobre pares muestreados

    Args:
        streams: Streams de entrenamiento
        params: Pesos del grafo de pre-entrenamiento (se actualizan in situ)
        model_cfg: Configuración del modelo
        cfg: Configuración del pre-entrenamiento
        seed: Semilla maestra de la ejecución
        optimizer: Estado Adam (por defecto, valores estándar)
        held_out: Streams de validación para la evaluación final

    Returns:
        PretrainResult: Pesos, historial por epoch y precisión en validación

    Raises:
        TrainingDivergedError: Si la pérdida deja de ser finita
    """
    start_time = datetime.now()
    state = optimizer or AdamState()
    sampler = PairSampler(streams, cfg.sampler(), derive_rng(seed, 'sampler'))
    context_rng = derive_rng(seed, 'contextual')
    steps = max(1, cfg.pairs_per_epoch // cfg.batch_size)
    rows = []

    logging.info(f"Pre-entrenamiento: {cfg.epochs} epochs x {steps} pasos, lote {cfg.batch_size}, "
                 f"pos_prob={cfg.pos_prob}")
    for epoch in range(1, cfg.epochs + 1):
        losses, positives, nonzero = [], 0, []
        correct = [0, 0, 0]
        seen = 0
        for step in range(1, steps + 1):
            batch = sampler.next_batch(cfg.batch_size)
            stats: Dict[str, float] = {}
            heads = forward_pretrain(batch.triple, params, model_cfg, context_rng, training=True, stats=stats)
            loss = alignment_loss(heads, batch.audio_labels, batch.visual_labels)
            value = float(loss.data)
            if not np.isfinite(value):
                logging.error(f"Pérdida no finita en pre-entrenamiento (epoch {epoch}, paso {step}); "
                              f"máximo |w| = "
                              f"{max(float(np.abs(t.data).max()) for _, t in params.items()):.3e}")
                raise TrainingDivergedError('pretrain', epoch, step, value)
            backward(loss, params)
            adam_step(params, state)

            losses.append(value)
            positives += int(batch.positive.sum())
            seen += len(batch.positive)
            nonzero.append(stats['visual_nonzero'])
            for i, hit in enumerate(_head_hits(heads, batch.audio_labels, batch.visual_labels)):
                correct[i] = None if hit is None else correct[i] + hit

        row = {
            'epoch': epoch,
            'loss': float(np.mean(losses)),
            'acc_audio': correct[0] / seen,
            'acc_visual_t': correct[1] / seen,
            'acc_visual_at': np.nan if correct[2] is None else correct[2] / seen,
            'positive_rate': positives / seen,
            'visual_nonzero': float(np.mean(nonzero)),
        }
        rows.append(row)
        logging.info(f"[pretrain] epoch {epoch}/{cfg.epochs} loss={row['loss']:.4f} "
                     f"acc_a={row['acc_audio']:.3f} acc_vt={row['acc_visual_t']:.3f} "
                     f"acc_vat={row['acc_visual_at']:.3f} pos={row['positive_rate']:.3f} "
                     f"tokens_v={row['visual_nonzero']:.3f}")

    result = PretrainResult(params=params, history=pd.DataFrame(rows), data_hash=streams_hash(streams))
    if held_out:
        result.held_out = evaluate_alignment(held_out, params, model_cfg, cfg.batch_size)
        logging.info(f"[pretrain] precisión en validación (pares positivos): {result.held_out}")

    log_run_stats('pre-entrenamiento', start_time, {
        'epochs': cfg.epochs,
        'pérdida final': rows[-1]['loss'] if rows else float('nan'),
        **{f'validación {k}': v for k, v in result.held_out.items()},
    })
    return result
