"""
Manifiesto de ejecución: lo necesario para reproducir una ejecución exacta
"""

import json
import logging
import platform
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

MANIFEST_FILE = 'manifest.json'


def build_manifest(command: str, config_hash: str, seed: int, dataset_hash: Optional[str],
                   extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Construye el manifiesto de una ejecución

    Args:
        command: Subcomando (pretrain, train, eval, ablate)
        config_hash: Hash de la configuración resuelta
        seed: Semilla maestra
        dataset_hash: Hash de contenido del dataset (None si no aplica)
        extra: Campos adicionales (variante, checkpoint de origen...)

    Returns:
        Dict[str, Any]: Manifiesto serializable
    """
    manifest = {
        'command': command,
        'config_hash': config_hash,
        'seed': int(seed),
        'dataset_hash': dataset_hash,
        'numpy_version': np.__version__,
        'python_version': platform.python_version(),
        'created_at': datetime.now().isoformat(timespec='seconds'),
    }
    manifest.update(extra or {})
    return manifest


def write_manifest(directory: Union[str, Path], manifest: Dict[str, Any]) -> Path:
    path = Path(directory) / MANIFEST_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=str)
    logging.info(f"Manifiesto escrito: {path}")
    return path


def read_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    with open(Path(directory) / MANIFEST_FILE, 'r', encoding='utf-8') as f:
        return json.load(f)
