"""
Piezas compartidas por los subcomandos: banco de prototipos, datos y fases
"""

import logging
from dataclasses import replace
from typing import Optional

from config.run_config import RunConfig
from harness.training import TrainResult, train_answer_model
from model.cad import CadConfig, init_weights
from pretrain.alignment import PretrainResult, build_pretrain_streams, run_pretraining
from synthetic.dataset import SyntheticDataset, make_dataset
from synthetic.features import PrototypeBank
from utils.helpers import derive_rng


def build_bank(cfg: RunConfig) -> PrototypeBank:
    """Banco común a episodios AVQA y streams de pre-entrenamiento"""
    return PrototypeBank(cfg.bank_size, cfg.data.dims(), cfg.data.prototype_seed, cfg.data.base_noise)


def build_dataset(cfg: RunConfig, seed: int, bank: Optional[PrototypeBank] = None) -> SyntheticDataset:
    bank = bank or build_bank(cfg)
    return make_dataset(cfg.data.n_episodes, cfg.data.distribution(), derive_rng(seed, 'dataset'),
                        bank, cfg.data.vocab())


def pretrain_phase(cfg: RunConfig, seed: int, model_cfg: CadConfig,
                   bank: Optional[PrototypeBank] = None) -> PretrainResult:
    """
    Pre-entrenamiento de alineamiento con los streams de barrido

    Siempre usa las tres modalidades: la restricción de entradas solo afecta al
    entrenamiento supervisado.
    """
    bank = bank or build_bank(cfg)
    model_cfg = replace(model_cfg, inputs='AVQ')
    rng = derive_rng(seed, 'pretrain_data')
    streams = build_pretrain_streams(bank, cfg.data.dims(), cfg.pretrain, cfg.pretrain.n_streams, rng)
    held_out = build_pretrain_streams(bank, cfg.data.dims(), cfg.pretrain, cfg.pretrain.eval_streams, rng)
    params = init_weights(model_cfg, derive_rng(seed, 'init', 1), graph='pretrain')
    logging.info(f"Streams de pre-entrenamiento: {len(streams)} de entrenamiento, {len(held_out)} de validación")
    return run_pretraining(streams, params, model_cfg, cfg.pretrain, seed, cfg.optimizer.adam(), held_out)


def train_phase(cfg: RunConfig, seed: int, dataset: SyntheticDataset, model_cfg: CadConfig,
                init_state=None) -> TrainResult:
    return train_answer_model(dataset, model_cfg, cfg.train, cfg.optimizer.adam(), seed, init_state)
