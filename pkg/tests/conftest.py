"""
Fixtures compartidas por las pruebas
"""

import os
import tempfile

# Los registros de las pruebas no ensucian el directorio de trabajo
os.environ.setdefault('CAD_LOG_DIR', tempfile.mkdtemp(prefix='cad-logs-'))
os.environ.setdefault('CAD_THREADS', '1')

from pathlib import Path

import numpy as np
import pytest

from model.cad import CadConfig, FeatureTriple
from model.contextual import ContextualConfig

TINY_CONFIG = """
seed=3
model.dim=8
model.heads=2
model.n_answers=12
model.n_time_labels=12
pretrain.n_time_labels=12
pretrain.epochs=2
pretrain.pairs_per_epoch=16
pretrain.batch_size=8
pretrain.n_streams=2
pretrain.eval_streams=1
data.n_episodes=20
data.d_a=4
data.d_t=4
data.c=4
data.s=4
train.epochs=2
train.batch_size=8
ablation.variants="w/o Pre-training,w A + V + Q"
ablation.seeds=0,1
"""


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Modelo mínimo: d=8, 2 cabezas, entradas de 4 canales"""
    return CadConfig(dim=8, heads=2, n_answers=5, n_time_labels=6, d_a=4, d_t=4, d_v=4,
                     contextual=ContextualConfig())


def make_triple(rng, batch=2, t_a=3, l_q=2, t_v=3, s=4, d=4) -> FeatureTriple:
    return FeatureTriple(
        rng.standard_normal((batch, t_a, d)),
        rng.standard_normal((batch, l_q, d)),
        rng.standard_normal((batch, t_v, s, d)),
    )


@pytest.fixture
def tiny_triple(rng):
    return make_triple(rng)


@pytest.fixture
def tiny_config_file(tmp_path) -> Path:
    path = tmp_path / 'tiny.env'
    path.write_text(TINY_CONFIG, encoding='utf-8')
    return path
