"""
Funciones auxiliares comunes: semillas, hashes y registro de estadísticas
"""

import hashlib
import logging
from datetime import datetime
from typing import Dict, Iterable, Optional

import numpy as np

# Cada componente estocástico tiene su propio flujo derivado de la semilla maestra
RNG_STREAMS = {
    'dataset': 0,
    'init': 1,
    'sampler': 2,
    'contextual': 3,
    'train': 4,
    'eval': 5,
    'pretrain_data': 6,
    'heads': 7,
}


def derive_rng(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """
    Deriva un generador independiente a partir de la semilla maestra

    Usa Philox (basado en contador): la clave combina semilla, flujo e índice,
    así activar o desactivar un componente no altera los demás.

    Args:
        seed (int): Semilla maestra (u64)
        stream (str): Nombre del flujo (ver RNG_STREAMS)
        index (int): Sub-índice (por ejemplo, episodio o ejecución)

    Returns:
        np.random.Generator: Generador determinista
    """
    if stream not in RNG_STREAMS:
        raise ValueError(f"Flujo de semillas desconocido: {stream}")
    key = (int(seed) & (2**64 - 1)) | (RNG_STREAMS[stream] << 64) | (int(index) << 72)
    return np.random.Generator(np.random.Philox(key=key))


def hash_arrays(arrays: Iterable[np.ndarray]) -> str:
    """
    Calcula un hash de contenido (sha256) sobre una secuencia de arrays

    Args:
        arrays: Arrays en orden estable

    Returns:
        str: Digest hexadecimal
    """
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.dtype).encode('utf-8'))
        digest.update(str(array.shape).encode('utf-8'))
        digest.update(array.tobytes())
    return digest.hexdigest()


def hash_text(text: str) -> str:
    """sha256 de un texto UTF-8"""
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def log_run_stats(title: str, start_time: datetime, stats: Dict[str, float],
                  end_time: Optional[datetime] = None) -> float:
    """
    Registra el resumen de una ejecución

    Args:
        title (str): Nombre de la fase (pre-entrenamiento, entrenamiento...)
        start_time (datetime): Tiempo de inicio
        stats (Dict[str, float]): Métricas finales a listar
        end_time (datetime, optional): Tiempo de fin (por defecto, ahora)

    Returns:
        float: Duración en segundos
    """
    end_time = end_time or datetime.now()
    duration = (end_time - start_time).total_seconds()

    logging.info("=" * 40)
    logging.info(f"RESUMEN: {title.upper()}")
    logging.info("=" * 40)
    for key, value in stats.items():
        if isinstance(value, float):
            logging.info(f"{key}: {value:.4f}")
        else:
            logging.info(f"{key}: {value}")
    logging.info(f"Tiempo total: {duration:.2f} segundos")
    logging.info("=" * 40)
    return duration
