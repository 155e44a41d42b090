"""
Conjuntos de datos AVQA sintéticos: episodios, preguntas y particiones
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from engine.tensor import Tensor
from model.cad import FeatureTriple
from synthetic.features import (
    AnswerVocab, ClassActivity, Episode, EpisodeSpec, FeatureDims, PrototypeBank,
    QASample, generate_episode, generate_qa,
)
from utils.helpers import hash_arrays

SPLIT_RATIOS = (('train', 0.8), ('val', 0.1), ('test', 0.1))


@dataclass
class EpisodeDistribution:
    """Distribución de la que se muestrean especificaciones de episodio"""
    n_classes: int = 3
    n_cues: int = 10
    presence_prob: float = 0.7
    both_prob: float = 0.5
    min_duration: int = 2
    alignment_noise: float = 0.0
    cues_per_clip: int = 10
    dims: FeatureDims = field(default_factory=FeatureDims)

    def __post_init__(self):
        if not 1 <= self.min_duration <= self.n_cues:
            raise ValueError(f"min_duration debe estar en [1, {self.n_cues}], recibido {self.min_duration}")


@dataclass
class AVQAItem:
    episode: Episode
    qa: QASample


def _interval(rng: np.random.Generator, n_cues: int, min_duration: int) -> Tuple[int, int]:
    duration = int(rng.integers(min_duration, n_cues + 1))
    onset = int(rng.integers(0, n_cues - duration + 1))
    return onset, onset + duration


def sample_spec(dist: EpisodeDistribution, rng: np.random.Generator, seed: int) -> EpisodeSpec:
    """
    Muestrea qué clases aparecen y en qué modalidades

    Cada clase aparece con probabilidad presence_prob; si aparece, lo hace en
    ambas modalidades con el mismo intervalo (both_prob) o solo en una.
    """
    activities = []
    for class_id in range(dist.n_classes):
        present = rng.random() < dist.presence_prob
        mode = rng.random()
        interval = _interval(rng, dist.n_cues, dist.min_duration)
        if not present:
            continue
        if mode < dist.both_prob:
            activities.append(ClassActivity(class_id, audio=interval, visual=interval))
        elif mode < dist.both_prob + (1.0 - dist.both_prob) / 2:
            activities.append(ClassActivity(class_id, audio=interval))
        else:
            activities.append(ClassActivity(class_id, visual=interval))
    return EpisodeSpec(n_classes=dist.n_classes, n_cues=dist.n_cues, activities=activities,
                       dims=dist.dims, alignment_noise=dist.alignment_noise, seed=seed,
                       cues_per_clip=dist.cues_per_clip)


def split_indices(n: int, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """Particiones 80/10/10 disjuntas que suman exactamente n"""
    order = rng.permutation(n)
    n_train = int(n * SPLIT_RATIOS[0][1])
    n_val = int(n * SPLIT_RATIOS[1][1])
    return {
        'train': np.sort(order[:n_train]),
        'val': np.sort(order[n_train:n_train + n_val]),
        'test': np.sort(order[n_train + n_val:]),
    }


class SyntheticDataset:
    """Episodios AVQA con sus preguntas y particiones reproducibles"""

    def __init__(self, items: List[AVQAItem], splits: Dict[str, np.ndarray], vocab: AnswerVocab,
                 dims: FeatureDims, seed: int, bank_seed: int):
        self.items = items
        self.splits = splits
        self.vocab = vocab
        self.dims = dims
        self.seed = seed
        self.bank_seed = bank_seed

    def __len__(self) -> int:
        return len(self.items)

    def split(self, name: str) -> List[AVQAItem]:
        return [self.items[i] for i in self.splits[name]]

    def stack(self, indices) -> Tuple[FeatureTriple, np.ndarray]:
        """Apila los episodios indicados en un FeatureTriple y sus etiquetas"""
        items = [self.items[i] for i in indices]
        audio = np.stack([item.episode.audio for item in items])
        question = np.stack([item.qa.question for item in items])
        visual = np.stack([item.episode.visual for item in items])
        labels = np.array([item.qa.answer_label for item in items], dtype=np.int64)
        return FeatureTriple(Tensor(audio), Tensor(question), Tensor(visual)), labels

    def batches(self, split: str, batch_size: int,
                rng: Optional[np.random.Generator] = None) -> Iterator[Tuple[FeatureTriple, np.ndarray, np.ndarray]]:
        """
        Recorre una partición por lotes

        Args:
            split: 'train', 'val' o 'test'
            batch_size: Tamaño de lote
            rng: Si se indica, baraja el orden

        Yields:
            (FeatureTriple, etiquetas, índices)
        """
        indices = self.splits[split]
        if rng is not None:
            indices = indices[rng.permutation(len(indices))]
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            triple, labels = self.stack(chunk)
            yield triple, labels, chunk

    def category_counts(self) -> pd.DataFrame:
        """Conteo de preguntas por partición, ámbito y tipo"""
        rows = []
        for split, indices in self.splits.items():
            for i in indices:
                qa = self.items[i].qa
                rows.append({'split': split, 'scope': qa.scope, 'question_type': qa.category})
        if not rows:
            return pd.DataFrame(columns=['split', 'scope', 'question_type', 'n'])
        df = pd.DataFrame(rows)
        return df.groupby(['split', 'scope', 'question_type']).size().reset_index(name='n')

    def content_hash(self) -> str:
        """Hash del contenido (características, respuestas y particiones)"""
        def arrays():
            for item in self.items:
                yield item.episode.audio
                yield item.episode.visual
                yield item.qa.question
                yield np.array([item.qa.answer_label], dtype=np.int64)
            for name in sorted(self.splits):
                yield np.asarray(self.splits[name], dtype=np.int64)
        return hash_arrays(arrays())


def make_dataset(n_episodes: int, dist: EpisodeDistribution, rng: np.random.Generator,
                 bank: PrototypeBank, vocab: Optional[AnswerVocab] = None) -> SyntheticDataset:
    """
    Genera un conjunto AVQA sintético reproducible

    Cada episodio usa semillas derivadas propias, de modo que su contenido no
    depende del orden de generación.

    Args:
        n_episodes: Número de episodios (>= 1)
        dist: Distribución de especificaciones
        rng: Generador del conjunto
        bank: Banco de prototipos
        vocab: Vocabulario de respuestas (por defecto, según dist.n_classes)

    Returns:
        SyntheticDataset
    """
    if n_episodes < 1:
        raise ValueError(f"n_episodes debe ser >= 1, recibido {n_episodes}")
    vocab = vocab or AnswerVocab(dist.n_classes)
    seed = int(rng.integers(0, 2**63 - 1))
    episode_seeds = rng.integers(0, 2**63 - 1, size=n_episodes)
    items = []
    for episode_seed in episode_seeds:
        episode_seed = int(episode_seed)
        spec = sample_spec(dist, np.random.default_rng([episode_seed, 0]), episode_seed)
        episode = generate_episode(spec, bank, np.random.default_rng([episode_seed, 1]))
        qa = generate_qa(episode, bank, vocab, np.random.default_rng([episode_seed, 2]))
        items.append(AVQAItem(episode=episode, qa=qa))

    splits = split_indices(n_episodes, rng)
    dataset = SyntheticDataset(items, splits, vocab, dist.dims, seed, bank.seed)
    counts = dataset.category_counts()
    logging.info(f"Dataset sintético: {n_episodes} episodios "
                 f"(train={len(splits['train'])}, val={len(splits['val'])}, test={len(splits['test'])})")
    for row in counts.itertuples(index=False):
        logging.debug(f"  {row.split} {row.scope} {row.question_type}: {row.n}")
    return dataset
