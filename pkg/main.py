#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Script principal de experimentos CAD (AVQA audio-visual a escala de escritorio)

Subcomandos: pretrain, train, eval y ablate. Cada ejecución escribe en
<out>/<subcomando>/ sus checkpoints, registros TSV, la configuración resuelta
y un manifiesto para reproducirla.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

# Importaciones locales (settings antes que numpy: fija los hilos BLAS)
from config.settings import DEFAULT_SEED, OUT_DIR, WORKERS

from colorama import init, Fore, Style

from config.run_config import RunConfig, config_hash, load_run_config
from engine.optim import ParamSet
from harness.ablation import run_ablation, write_ablation, write_tsv
from harness.metrics import MetricsTable
from harness.pipeline import build_bank, build_dataset, pretrain_phase, train_phase
from harness.training import evaluate_model
from model.cad import init_weights
from storage.checkpoint import load_checkpoint, save_checkpoint
from storage.dataset_store import load_dataset, save_dataset
from storage.manifest import build_manifest, write_manifest
from utils.helpers import derive_rng

# Inicializar colorama para formateo de colores
init()

CHECKPOINT_FILE = 'checkpoint.cadw'


###########################################
# UTILIDADES DE SALIDA
###########################################

def run_dir(cfg: RunConfig, command: str) -> Path:
    path = Path(cfg.out_dir) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_resolved_config(cfg: RunConfig, directory: Path) -> Path:
    path = directory / 'config.env'
    with open(path, 'w', encoding='utf-8') as f:
        f.write(cfg.render())
    return path


def print_metrics(title: str, metrics: MetricsTable) -> None:
    """Muestra la tabla de métricas en pantalla"""
    print(f"\n{Fore.CYAN}=== {title} ==={Style.RESET_ALL}")
    for row in metrics.full_table().itertuples(index=False):
        color = Fore.GREEN if row.question_type == 'avg' else Fore.WHITE
        print(f"{color}{row.scope:>4} {row.question_type:<12} n={row.n:<6} acc={row.accuracy:.4f}{Style.RESET_ALL}")


###########################################
# SUBCOMANDOS
###########################################

def cmd_pretrain(cfg: RunConfig, args: argparse.Namespace) -> Path:
    """Pre-entrenamiento de alineamiento; escribe checkpoint y registro por epoch"""
    out = run_dir(cfg, 'pretrain')
    model_cfg = cfg.cad_config()
    result = pretrain_phase(cfg, cfg.seed, model_cfg, build_bank(cfg))

    checkpoint = save_checkpoint(out / CHECKPOINT_FILE, result.checkpoint)
    write_tsv(result.history, out / 'pretrain_log.tsv')
    write_resolved_config(cfg, out)
    write_manifest(out, build_manifest('pretrain', config_hash(cfg), cfg.seed, result.data_hash, {
        'variant': model_cfg.variant,
        'use_contextual': model_cfg.use_contextual,
        'checkpoint': str(checkpoint),
        'held_out_accuracy': result.held_out,
    }))

    print(f"\n{Fore.CYAN}=== Pre-entrenamiento ==={Style.RESET_ALL}")
    for head, accuracy in result.held_out.items():
        print(f"{Fore.GREEN}Cabeza {head}: {accuracy:.4f}{Style.RESET_ALL}")
    print(f"Checkpoint: {checkpoint}")
    return checkpoint


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> Path:
    """Entrenamiento supervisado, opcionalmente desde un checkpoint de pre-entrenamiento"""
    out = run_dir(cfg, 'train')
    model_cfg = cfg.cad_config()
    dataset = build_dataset(cfg, cfg.seed)
    init_state = load_checkpoint(cfg.train.init_from) if cfg.train.init_from else None
    result = train_phase(cfg, cfg.seed, dataset, model_cfg, init_state)

    checkpoint = save_checkpoint(out / CHECKPOINT_FILE, result.params.state())
    write_tsv(result.history, out / 'train_log.tsv')
    result.metrics.to_tsv(out / 'metrics.tsv')
    save_dataset(out / 'dataset', dataset)
    write_resolved_config(cfg, out)
    write_manifest(out, build_manifest('train', config_hash(cfg), cfg.seed, dataset.content_hash(), {
        'variant': model_cfg.variant,
        'inputs': model_cfg.inputs,
        'use_contextual': model_cfg.use_contextual,
        'init_from': cfg.train.init_from or None,
        'checkpoint': str(checkpoint),
        'test_accuracy': result.metrics.overall(),
    }))

    print_metrics('Entrenamiento: precisión en test', result.metrics)
    print(f"Checkpoint: {checkpoint}")
    return checkpoint


def cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> Path:
    """Inferencia pura sobre la partición de test; escribe metrics.tsv"""
    out = run_dir(cfg, 'eval')
    model_cfg = cfg.cad_config()
    dataset = load_dataset(args.dataset) if args.dataset else build_dataset(cfg, cfg.seed)
    state = load_checkpoint(args.checkpoint)
    params: ParamSet = init_weights(model_cfg, derive_rng(cfg.seed, 'init'), graph='answer')
    params.load_state(state)

    metrics = evaluate_model(dataset, 'test', params, model_cfg)
    path = out / 'metrics.tsv'
    metrics.to_tsv(path)
    write_resolved_config(cfg, out)
    write_manifest(out, build_manifest('eval', config_hash(cfg), cfg.seed, dataset.content_hash(), {
        'variant': model_cfg.variant,
        'checkpoint': str(args.checkpoint),
        'dataset': str(args.dataset) if args.dataset else None,
        'test_accuracy': metrics.overall(),
    }))

    print_metrics('Evaluación', metrics)
    return path


def cmd_ablate(cfg: RunConfig, args: argparse.Namespace) -> Path:
    """Matriz de ablación completa; escribe ablation.tsv"""
    out = run_dir(cfg, 'ablate')
    workers = args.workers or cfg.ablation.workers or WORKERS
    result = run_ablation(cfg, workers=workers)
    table_path, _ = write_ablation(result, out)

    bank = build_bank(cfg)
    dataset_hashes = {str(seed): build_dataset(cfg, seed, bank).content_hash()
                      for seed in cfg.ablation.seed_list()}
    write_resolved_config(cfg, out)
    write_manifest(out, build_manifest('ablate', config_hash(cfg), cfg.seed, None, {
        'seeds': cfg.ablation.seed_list(),
        'dataset_hashes': dataset_hashes,
        'variants': list(result.table['variant']),
        'workers': workers,
    }))

    print(f"\n{Fore.CYAN}=== Ablación ==={Style.RESET_ALL}")
    for row in result.table.itertuples(index=False):
        print(f"{Fore.GREEN}{row.variant:<22}{Style.RESET_ALL} A={row.A:.4f} V={row.V:.4f} "
              f"AV={row.AV:.4f} avg={row.avg:.4f}")
    return table_path


COMMANDS = {
    'pretrain': cmd_pretrain,
    'train': cmd_train,
    'eval': cmd_eval,
    'ablate': cmd_ablate,
}


###########################################
# LÍNEA DE COMANDOS
###########################################

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Experimentos CAD: pre-entrenamiento, entrenamiento, evaluación y ablación')
    subparsers = parser.add_subparsers(dest='command', required=True)

    for name, help_text in (('pretrain', 'Pre-entrenamiento de alineamiento temporal'),
                            ('train', 'Entrenamiento supervisado AVQA'),
                            ('eval', 'Evaluación de un checkpoint'),
                            ('ablate', 'Matriz de ablación')):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument('--config', required=True, help='Archivo de configuración (clave=valor)')
        sub.add_argument('--seed', type=int, help='Semilla maestra (u64)')
        sub.add_argument('--out', help='Directorio de salida')
        sub.add_argument('--variant', choices=['3CA', '2CA', '4CA'], help='Variante de la cadena de CABs')
        sub.add_argument('--inputs', choices=['Q', 'AQ', 'VQ', 'AVQ'], help='Modalidades de entrada')
        if name == 'train':
            sub.add_argument('--init-from', dest='init_from', help='Checkpoint de pre-entrenamiento para el tronco')
        if name == 'eval':
            sub.add_argument('--checkpoint', required=True, help='Checkpoint del modelo entrenado')
            sub.add_argument('--dataset', help='Directorio de dataset guardado (por defecto se regenera)')
        if name == 'ablate':
            sub.add_argument('--workers', type=int, default=0, help='Procesos en paralelo')
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Optional[str]]:
    return {
        'seed': args.seed,
        'out_dir': args.out,
        'model.variant': args.variant,
        'model.inputs': args.inputs,
        'train.init_from': getattr(args, 'init_from', None),
    }


def main(argv: Optional[List[str]] = None) -> int:
    """Función principal del script"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        cfg = load_run_config(args.config, overrides=overrides_from_args(args),
                              defaults={'seed': DEFAULT_SEED, 'out_dir': OUT_DIR})
        COMMANDS[args.command](cfg, args)
    except Exception as e:
        logging.error(f"Error en la ejecución ({args.command}): {str(e)}")
        print(f"{Fore.RED}Error en la ejecución: {str(e)}{Style.RESET_ALL}")
        sys.exit(1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
