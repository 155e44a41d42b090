"""
Entrenamiento supervisado del clasificador de respuestas y evaluación
"""

import logging
from dataclasses import dataclass
from datetime import datetime
from typing import Dict, Mapping, Optional

import numpy as np
import pandas as pd

from config.run_config import TrainSection
from engine.optim import AdamState, ParamSet, adam_step
from engine.tensor import backward
from harness.metrics import MetricsTable
from model.cad import CadConfig, avqa_loss, forward_answer, init_from_pretrained, init_weights, predict_answers
from synthetic.dataset import SyntheticDataset
from utils.errors import TrainingDivergedError
from utils.helpers import derive_rng, log_run_stats


@dataclass
class TrainResult:
    params: ParamSet
    history: pd.DataFrame
    metrics: MetricsTable


def evaluate_model(dataset: SyntheticDataset, split: str, params: ParamSet, model_cfg: CadConfig,
                   batch_size: int = 256) -> MetricsTable:
    """
    Inferencia sobre una partición y tabla de precisión por categoría

    Args:
        dataset: Conjunto sintético
        split: 'train', 'val' o 'test'
        params: Pesos del grafo de respuesta
        model_cfg: Configuración del modelo
        batch_size: Tamaño de lote de inferencia

    Returns:
        MetricsTable
    """
    predictions, labels, scopes, types = [], [], [], []
    for triple, y, indices in dataset.batches(split, batch_size):
        predictions.append(predict_answers(triple, params, model_cfg))
        labels.append(y)
        for i in indices:
            scopes.append(dataset.items[i].qa.scope)
            types.append(dataset.items[i].qa.category)
    if not labels:
        return MetricsTable(pd.DataFrame({'scope': [], 'question_type': [], 'n': [], 'correct': []}))
    return MetricsTable.from_predictions(scopes, types, np.concatenate(predictions), np.concatenate(labels))


def train_answer_model(dataset: SyntheticDataset, model_cfg: CadConfig, train_cfg: TrainSection,
                       optimizer: AdamState, seed: int,
                       init_state: Optional[Mapping[str, np.ndarray]] = None) -> TrainResult:
    """
    Entrena la red completa con la pérdida AVQA

    Args:
        dataset: Conjunto sintético con particiones
        model_cfg: Configuración del modelo
        train_cfg: Epochs y tamaño de lote
        optimizer: Estado Adam inicial
        seed: Semilla maestra
        init_state: Checkpoint de pre-entrenamiento para el tronco (opcional)

    Returns:
        TrainResult: Pesos, historial por epoch y métricas en test

    Raises:
        TrainingDivergedError: Si la pérdida deja de ser finita
        CheckpointError: Si el checkpoint no es compatible con el modelo
    """
    start_time = datetime.now()
    params = init_weights(model_cfg, derive_rng(seed, 'init'), graph='answer')
    if init_state is not None:
        params = init_from_pretrained(params, init_state)

    shuffle_rng = derive_rng(seed, 'train')
    context_rng = derive_rng(seed, 'contextual', 1)
    rows = []
    logging.info(f"Entrenamiento: variante {model_cfg.variant}, entradas {model_cfg.inputs}, "
                 f"contextual={'sí' if model_cfg.use_contextual else 'no'}, "
                 f"pre-entrenado={'sí' if init_state is not None else 'no'}")

    for epoch in range(1, train_cfg.epochs + 1):
        losses, hits, seen, nonzero = [], 0, 0, []
        for step, (triple, labels, _) in enumerate(dataset.batches('train', train_cfg.batch_size, shuffle_rng), 1):
            stats: Dict[str, float] = {}
            logits = forward_answer(triple, params, model_cfg, context_rng, training=True, stats=stats)
            loss = avqa_loss(logits, labels)
            value = float(loss.data)
            if not np.isfinite(value):
                logging.error(f"Pérdida no finita en entrenamiento (epoch {epoch}, paso {step})")
                raise TrainingDivergedError('train', epoch, step, value)
            backward(loss, params)
            adam_step(params, optimizer)

            losses.append(value * len(labels))
            hits += int((np.argmax(logits.data, axis=-1) == labels).sum())
            seen += len(labels)
            nonzero.append(stats['visual_nonzero'])

        val = evaluate_model(dataset, 'val', params, model_cfg)
        row = {
            'epoch': epoch,
            'loss': sum(losses) / max(seen, 1),
            'train_accuracy': hits / max(seen, 1),
            'val_accuracy': val.overall(),
            'visual_nonzero': float(np.mean(nonzero)) if nonzero else float('nan'),
        }
        rows.append(row)
        logging.info(f"[train] epoch {epoch}/{train_cfg.epochs} loss={row['loss']:.4f} "
                     f"acc={row['train_accuracy']:.3f} val={row['val_accuracy']:.3f} "
                     f"tokens_v={row['visual_nonzero']:.3f}")

    metrics = evaluate_model(dataset, 'test', params, model_cfg)
    log_run_stats('entrenamiento', start_time, {
        'epochs': train_cfg.epochs,
        'pérdida final': rows[-1]['loss'],
        'precisión test': metrics.overall(),
        'preguntas test': metrics.n,
    })
    return TrainResult(params=params, history=pd.DataFrame(rows), metrics=metrics)
