"""
Persistencia de conjuntos sintéticos en un directorio

header.json guarda dimensiones, vocabulario, particiones y la especificación
de cada episodio; episodes/NNNNN.cadw guarda sus arrays.
"""

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from storage.checkpoint import TensorFile
from synthetic.dataset import AVQAItem, SyntheticDataset
from synthetic.features import AnswerVocab, ClassActivity, Episode, EpisodeSpec, FeatureDims, QASample
from utils.errors import CheckpointError

HEADER_FILE = 'header.json'
EPISODES_DIR = 'episodes'


def _spec_to_dict(spec: EpisodeSpec) -> Dict:
    return {
        'n_classes': spec.n_classes,
        'n_cues': spec.n_cues,
        'alignment_noise': spec.alignment_noise,
        'seed': spec.seed,
        'cues_per_clip': spec.cues_per_clip,
        'activities': [
            {'class_id': a.class_id, 'audio': list(a.audio) if a.audio else None,
             'visual': list(a.visual) if a.visual else None}
            for a in spec.activities
        ],
    }


def _spec_from_dict(data: Dict, dims: FeatureDims) -> EpisodeSpec:
    activities = [
        ClassActivity(a['class_id'],
                      audio=tuple(a['audio']) if a['audio'] else None,
                      visual=tuple(a['visual']) if a['visual'] else None)
        for a in data['activities']
    ]
    return EpisodeSpec(n_classes=data['n_classes'], n_cues=data['n_cues'], activities=activities,
                       dims=dims, alignment_noise=data['alignment_noise'], seed=data['seed'],
                       cues_per_clip=data['cues_per_clip'])


def save_dataset(directory: Union[str, Path], dataset: SyntheticDataset) -> Path:
    """
    Guarda un conjunto sintético

    Args:
        directory: Directorio de destino (se crea si no existe)
        dataset: Conjunto a guardar

    Returns:
        Path: Directorio escrito
    """
    directory = Path(directory)
    (directory / EPISODES_DIR).mkdir(parents=True, exist_ok=True)
    header = {
        'seed': dataset.seed,
        'bank_seed': dataset.bank_seed,
        'dims': asdict(dataset.dims),
        'vocab': {'n_classes': dataset.vocab.n_classes, 'max_count': dataset.vocab.max_count},
        'splits': {name: [int(i) for i in idx] for name, idx in sorted(dataset.splits.items())},
        'content_hash': dataset.content_hash(),
        'items': [],
    }
    for index, item in enumerate(dataset.items):
        header['items'].append({
            'spec': _spec_to_dict(item.episode.spec),
            'category': item.qa.category,
            'scope': item.qa.scope,
            'answer_label': int(item.qa.answer_label),
            'class_id': int(item.qa.class_id),
        })
        with TensorFile(directory / EPISODES_DIR / f"{index:05d}.cadw", 'w') as tensor_file:
            tensor_file.write_all({
                'audio': item.episode.audio,
                'visual': item.episode.visual,
                'clip_queries': item.episode.clip_queries,
                'question': item.qa.question,
            })
    with open(directory / HEADER_FILE, 'w', encoding='utf-8') as f:
        json.dump(header, f, indent=2, sort_keys=True)
    logging.info(f"Dataset guardado en {directory} ({len(dataset)} episodios)")
    return directory


def load_dataset(directory: Union[str, Path]) -> SyntheticDataset:
    """
    Carga un conjunto guardado con save_dataset y verifica su hash

    Raises:
        FileNotFoundError: Si falta la cabecera
        CheckpointError: Si algún episodio no se puede leer o el hash no coincide
    """
    directory = Path(directory)
    header_path = directory / HEADER_FILE
    if not header_path.exists():
        raise FileNotFoundError(f"No existe la cabecera del dataset: {header_path}")
    with open(header_path, 'r', encoding='utf-8') as f:
        header = json.load(f)

    dims = FeatureDims(**header['dims'])
    vocab = AnswerVocab(**header['vocab'])
    items = []
    for index, meta in enumerate(header['items']):
        with TensorFile(directory / EPISODES_DIR / f"{index:05d}.cadw") as tensor_file:
            arrays = tensor_file.read_all()
        spec = _spec_from_dict(meta['spec'], dims)
        episode = Episode(spec=spec, audio=arrays['audio'], visual=arrays['visual'],
                          clip_queries=arrays['clip_queries'])
        qa = QASample(question=arrays['question'], category=meta['category'], scope=meta['scope'],
                      answer_label=meta['answer_label'], class_id=meta['class_id'])
        items.append(AVQAItem(episode=episode, qa=qa))

    splits = {name: np.asarray(idx, dtype=np.int64) for name, idx in header['splits'].items()}
    dataset = SyntheticDataset(items, splits, vocab, dims, header['seed'], header['bank_seed'])
    if dataset.content_hash() != header['content_hash']:
        raise CheckpointError(f"El hash del dataset no coincide con la cabecera de {directory}")
    logging.info(f"Dataset cargado desde {directory} ({len(dataset)} episodios)")
    return dataset
