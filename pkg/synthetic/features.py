"""
Generador de episodios audio/texto/visual con alineamiento controlado

Cada clase tiene un prototipo fijo que se emite en audio y en visual durante
sus cues activas, sobre un fondo de ruido gaussiano. Las respuestas se
derivan únicamente de la especificación del episodio.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

CATEGORIES = ('existential', 'counting', 'temporal')
SCOPES = ('A', 'V', 'AV')

Interval = Tuple[int, int]


@dataclass
class FeatureDims:
    """Dimensiones sintéticas; audio y canal visual comparten prototipo"""
    d_a: int = 16
    d_t: int = 16
    s: int = 10
    c: int = 16
    l_q: int = 4
    frames_per_cue: int = 1

    def __post_init__(self):
        if min(self.d_a, self.d_t, self.s, self.c, self.l_q, self.frames_per_cue) < 1:
            raise ValueError(f"Dimensiones sintéticas inválidas: {self}")
        if self.d_a != self.c:
            raise ValueError(f"El prototipo compartido requiere d_a == c ({self.d_a} != {self.c})")
        if self.l_q < 2:
            raise ValueError("La pregunta necesita al menos 2 tokens (tipo y clase)")


@dataclass
class ClassActivity:
    """Intervalos [onset, offset) de una clase en cada modalidad (None si ausente)"""
    class_id: int
    audio: Optional[Interval] = None
    visual: Optional[Interval] = None


@dataclass
class EpisodeSpec:
    n_classes: int
    n_cues: int
    activities: List[ClassActivity]
    dims: FeatureDims = field(default_factory=FeatureDims)
    alignment_noise: float = 0.0
    seed: int = 0
    cues_per_clip: int = 10

    def __post_init__(self):
        if self.alignment_noise < 0:
            raise ValueError(f"alignment_noise debe ser >= 0, recibido {self.alignment_noise}")
        seen = set()
        for act in self.activities:
            if not 0 <= act.class_id < self.n_classes or act.class_id in seen:
                raise ValueError(f"Clase inválida o repetida en el episodio: {act.class_id}")
            seen.add(act.class_id)
            for interval in (act.audio, act.visual):
                if interval is not None and not 0 <= interval[0] < interval[1] <= self.n_cues:
                    raise ValueError(f"Intervalo inválido {interval} para {self.n_cues} cues")

    @property
    def n_clips(self) -> int:
        return -(-self.n_cues // self.cues_per_clip)


@dataclass
class Episode:
    """Streams generados: audio [n_units, d_a], visual [n_units, s, c], consultas [n_clips, l_q, d_t]"""
    spec: EpisodeSpec
    audio: np.ndarray
    visual: np.ndarray
    clip_queries: np.ndarray


@dataclass
class QASample:
    question: np.ndarray
    category: str
    scope: str
    answer_label: int
    class_id: int = -1

    @property
    def question_type(self) -> str:
        return self.category


class AnswerVocab:
    """
    Vocabulario de respuestas: no/sí, conteos 0..max_count e ids de clase

    Índices: 0 = no, 1 = sí, 2 + n = conteo n, 3 + max_count + k = clase k
    """

    def __init__(self, n_classes: int, max_count: int = 6):
        if n_classes > max_count:
            raise ValueError(f"n_classes ({n_classes}) supera max_count ({max_count})")
        self.n_classes = n_classes
        self.max_count = max_count

    NO = 0
    YES = 1

    def count(self, n: int) -> int:
        return 2 + int(n)

    def class_label(self, k: int) -> int:
        return 3 + self.max_count + int(k)

    @property
    def size(self) -> int:
        return 3 + self.max_count + self.n_classes


class PrototypeBank:
    """
    Prototipos fijos por clase, compartidos por todos los episodios

    Args:
        n_prototypes: Número de clases del banco
        dims: Dimensiones sintéticas
        seed: Semilla del banco (data.prototype_seed)
        base_noise: Desviación del ruido de fondo
    """

    def __init__(self, n_prototypes: int, dims: FeatureDims, seed: int = 0, base_noise: float = 0.5):
        rng = np.random.default_rng(seed)
        self.dims = dims
        self.seed = seed
        self.base_noise = float(base_noise)
        self.prototypes = rng.standard_normal((n_prototypes, dims.d_a))
        self.spatial_profiles = rng.uniform(0.5, 1.5, size=(n_prototypes, dims.s))
        self.text = rng.standard_normal((n_prototypes, dims.d_t))
        self.question_types: Dict[Tuple[str, str], np.ndarray] = {
            (category, scope): rng.standard_normal(dims.d_t)
            for category in CATEGORIES for scope in SCOPES
        }

    @property
    def n_prototypes(self) -> int:
        return self.prototypes.shape[0]


###########################################
# GENERACIÓN DE EPISODIOS
###########################################

def _active_classes(spec: EpisodeSpec, start: int, stop: int) -> List[int]:
    classes = []
    for act in spec.activities:
        for interval in (act.audio, act.visual):
            if interval is not None and interval[0] < stop and start < interval[1]:
                classes.append(act.class_id)
                break
    return sorted(classes)


def generate_episode(spec: EpisodeSpec, bank: PrototypeBank, rng: np.random.Generator) -> Episode:
    """
    Genera los streams de un episodio

    Las perturbaciones de alineamiento se extraen siempre (también con ruido
    cero) para que distintos niveles de ruido compartan números aleatorios.
    """
    dims = spec.dims
    if spec.n_classes > bank.n_prototypes:
        raise ValueError(f"El banco tiene {bank.n_prototypes} prototipos, el episodio pide {spec.n_classes}")
    fpc = dims.frames_per_cue
    n_units = spec.n_cues * fpc
    audio = rng.normal(0.0, bank.base_noise, size=(n_units, dims.d_a))
    visual = rng.normal(0.0, bank.base_noise, size=(n_units, dims.s, dims.c))

    for act in sorted(spec.activities, key=lambda a: a.class_id):
        prototype = bank.prototypes[act.class_id]
        profile = bank.spatial_profiles[act.class_id]
        if act.audio is not None:
            for cue in range(*act.audio):
                perturbation = spec.alignment_noise * rng.standard_normal(dims.d_a)
                audio[cue * fpc:(cue + 1) * fpc] += prototype + perturbation
        if act.visual is not None:
            for cue in range(*act.visual):
                perturbation = spec.alignment_noise * rng.standard_normal(dims.c)
                visual[cue * fpc:(cue + 1) * fpc] += profile[:, None] * (prototype + perturbation)[None, :]

    clip_queries = rng.normal(0.0, bank.base_noise, size=(spec.n_clips, dims.l_q, dims.d_t))
    for clip in range(spec.n_clips):
        start = clip * spec.cues_per_clip
        classes = _active_classes(spec, start, min(start + spec.cues_per_clip, spec.n_cues))
        if classes:
            for token in range(dims.l_q):
                clip_queries[clip, token] += bank.text[classes[token % len(classes)]]

    return Episode(
        spec=spec,
        audio=audio.astype(np.float32),
        visual=visual.astype(np.float32),
        clip_queries=clip_queries.astype(np.float32),
    )


def sweep_spec(n_time_labels: int, dims: FeatureDims, alignment_noise: float = 0.0,
               seed: int = 0, cues_per_clip: int = 10) -> EpisodeSpec:
    """Episodio de pre-entrenamiento: la clase k ocupa la cue k en ambas modalidades"""
    activities = [ClassActivity(k, audio=(k, k + 1), visual=(k, k + 1)) for k in range(n_time_labels)]
    return EpisodeSpec(n_classes=n_time_labels, n_cues=n_time_labels, activities=activities, dims=dims,
                       alignment_noise=alignment_noise, seed=seed, cues_per_clip=cues_per_clip)


###########################################
# PREGUNTAS Y RESPUESTAS
###########################################

def scope_interval(act: ClassActivity, scope: str) -> Optional[Interval]:
    """Intervalo en que la clase cuenta como presente para un ámbito A, V o AV"""
    if scope == 'A':
        return act.audio
    if scope == 'V':
        return act.visual
    if act.audio is None or act.visual is None:
        return None
    start, stop = max(act.audio[0], act.visual[0]), min(act.audio[1], act.visual[1])
    return (start, stop) if start < stop else None


def present_classes(spec: EpisodeSpec, scope: str) -> Dict[int, Interval]:
    present = {}
    for act in spec.activities:
        interval = scope_interval(act, scope)
        if interval is not None:
            present[act.class_id] = interval
    return present


def answer_from_spec(spec: EpisodeSpec, category: str, scope: str, class_id: int,
                     vocab: AnswerVocab) -> int:
    """
    Respuesta correcta a partir de la especificación

    existential: ¿está la clase presente?; counting: número de clases
    presentes; temporal: clase con el primer onset (empates: id menor).
    """
    present = present_classes(spec, scope)
    if category == 'existential':
        return vocab.YES if class_id in present else vocab.NO
    if category == 'counting':
        return vocab.count(len(present))
    if category == 'temporal':
        if not present:
            raise ValueError(f"Pregunta temporal sin clases presentes en el ámbito {scope}")
        first = min(present, key=lambda k: (present[k][0], k))
        return vocab.class_label(first)
    raise ValueError(f"Categoría desconocida: {category}")


def generate_qa(episode: Episode, bank: PrototypeBank, vocab: AnswerVocab,
                rng: np.random.Generator) -> QASample:
    """Pregunta aleatoria sobre el episodio con su respuesta derivada de la especificación"""
    spec = episode.spec
    dims = spec.dims
    category = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
    scope = SCOPES[int(rng.integers(len(SCOPES)))]
    class_id = int(rng.integers(spec.n_classes))
    question = rng.normal(0.0, bank.base_noise, size=(dims.l_q, dims.d_t))

    if category == 'temporal' and not present_classes(spec, scope):
        category = 'existential'
    if category != 'existential':
        class_id = -1

    question[0] += bank.question_types[(category, scope)]
    if class_id >= 0:
        question[1] += bank.text[class_id]
    answer = answer_from_spec(spec, category, scope, class_id, vocab)
    return QASample(question=question.astype(np.float32), category=category, scope=scope,
                    answer_label=answer, class_id=class_id)


###########################################
# ORÁCULO DE PROTOTIPO MÁS CERCANO
###########################################

def nearest_prototype_accuracy(episodes: List[Episode], bank: PrototypeBank) -> float:
    """
    Precisión de un clasificador de cues por prototipo más cercano (coseno)

    Solo se evalúan las cues de audio con exactamente una clase activa.
    """
    prototypes = bank.prototypes / np.linalg.norm(bank.prototypes, axis=1, keepdims=True)
    correct = total = 0
    for episode in episodes:
        spec = episode.spec
        fpc = spec.dims.frames_per_cue
        for cue in range(spec.n_cues):
            active = [a.class_id for a in spec.activities
                      if a.audio is not None and a.audio[0] <= cue < a.audio[1]]
            if len(active) != 1:
                continue
            feature = episode.audio[cue * fpc:(cue + 1) * fpc].mean(axis=0)
            feature = feature / max(np.linalg.norm(feature), 1e-12)
            guess = int(np.argmax(prototypes[:spec.n_classes] @ feature))
            correct += int(guess == active[0])
            total += 1
    return correct / total if total else 0.0
