"""
Matriz de ablación: cada variante del modelo con varias semillas

Cada semilla genera su propio dataset; los pre-entrenamientos se reutilizan
entre variantes que comparten tronco dentro de una misma semilla. El
resultado se ordena antes de emitirse, así que no depende del orden en que
terminen los procesos.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config.run_config import RunConfig
from harness.pipeline import build_bank, build_dataset, pretrain_phase, train_phase
from model.cad import CadConfig
from synthetic.features import SCOPES
from utils.errors import AblationRunError, ConfigError
from utils.helpers import log_run_stats

FULL_MODEL = 'w A + V + Q'

# Cambios respecto al modelo completo de cada fila
ABLATION_ROWS: Dict[str, Dict[str, Any]] = {
    'w/o Pre-training': {'pretrain': False},
    'w/o Contextual block': {'use_contextual': False},
    'w 3CA only': {'pretrain': False, 'use_contextual': False},
    'w 2CA': {'variant': '2CA'},
    'w 4CA': {'variant': '4CA'},
    'w Q': {'inputs': 'Q'},
    'w A + Q': {'inputs': 'AQ'},
    'w V + Q': {'inputs': 'VQ'},
    FULL_MODEL: {},
}

SCORE_COLUMNS = list(SCOPES) + ['avg']


@dataclass
class AblationVariant:
    name: str
    order: int
    variant: Optional[str] = None
    inputs: Optional[str] = None
    use_contextual: Optional[bool] = None
    pretrain: bool = True
    pos_prob: Optional[float] = None
    sample_frac: Optional[float] = None
    mask_frac: Optional[float] = None

    def model_changes(self) -> Dict[str, Any]:
        changes = {'variant': self.variant, 'inputs': self.inputs, 'use_contextual': self.use_contextual}
        return {k: v for k, v in changes.items() if v is not None}

    def contextual_changes(self) -> Dict[str, float]:
        changes = {'sample_frac': self.sample_frac, 'mask_frac': self.mask_frac}
        return {k: v for k, v in changes.items() if v is not None}

    def configure(self, cfg: RunConfig) -> Tuple[RunConfig, CadConfig]:
        """
        Aplica los cambios de la fila sobre la configuración base

        Returns:
            Tuple[RunConfig, CadConfig]: Configuración de la ejecución y del modelo
        """
        run_cfg = cfg
        if self.contextual_changes():
            run_cfg = replace(run_cfg, contextual=replace(cfg.contextual, **self.contextual_changes()))
        if self.pos_prob is not None:
            run_cfg = replace(run_cfg, pretrain=replace(cfg.pretrain, pos_prob=self.pos_prob))
        return run_cfg, run_cfg.cad_config(**self.model_changes())


@dataclass
class AblationResult:
    runs: pd.DataFrame
    table: pd.DataFrame


def resolve_variants(cfg: RunConfig) -> List[AblationVariant]:
    """
    Filas pedidas en ablation.variants (todas si está vacío) más una fila por
    cada valor de los barridos ablation.pos_probs, ablation.sample_fracs y
    ablation.mask_fracs, en ese orden

    Raises:
        ConfigError: Si alguna fila no existe
    """
    names = cfg.ablation.variant_list() or list(ABLATION_ROWS)
    unknown = [n for n in names if n not in ABLATION_ROWS]
    if unknown:
        raise ConfigError(f"Variantes de ablación desconocidas: {', '.join(unknown)} "
                          f"(opciones: {', '.join(ABLATION_ROWS)})")
    variants = []
    for name in names:
        variants.append(AblationVariant(name=name, order=list(ABLATION_ROWS).index(name), **ABLATION_ROWS[name]))
    sweeps = [('pos_prob', cfg.ablation.pos_prob_list()),
              ('sample_frac', cfg.ablation.sample_frac_list()),
              ('mask_frac', cfg.ablation.mask_frac_list())]
    order = len(ABLATION_ROWS)
    for key, values in sweeps:
        for value in values:
            variants.append(AblationVariant(name=f"{key}={value:g}", order=order, **{key: value}))
            order += 1
    return variants


def run_seed(cfg: RunConfig, seed: int, variants: List[AblationVariant]) -> List[Dict[str, Any]]:
    """
    Ejecuta todas las variantes para una semilla

    Returns:
        List[Dict]: Una fila por variante con la precisión por ámbito

    Raises:
        AblationRunError: Con el identificador de la ejecución que falló
    """
    bank = build_bank(cfg)
    dataset = build_dataset(cfg, seed, bank)
    pretrained: Dict[Tuple, Dict[str, np.ndarray]] = {}
    rows = []
    for variant in variants:
        run_id = f"{variant.name}|seed={seed}"
        try:
            run_cfg, model_cfg = variant.configure(cfg)
            init_state = None
            if variant.pretrain:
                key = (model_cfg.variant, model_cfg.use_contextual, run_cfg.pretrain.pos_prob,
                       model_cfg.contextual.sample_frac, model_cfg.contextual.mask_frac)
                if key not in pretrained:
                    pretrained[key] = pretrain_phase(run_cfg, seed, model_cfg, bank).checkpoint
                init_state = pretrained[key]
            result = train_phase(run_cfg, seed, dataset, model_cfg, init_state)
        except Exception as e:
            logging.error(f"Fallo en la ejecución {run_id}: {e}")
            raise AblationRunError(run_id, e) from e

        row = {'variant': variant.name, 'order': variant.order, 'seed': seed}
        for scope in SCOPES:
            row[scope] = result.metrics.scope_accuracy(scope)
        row['avg'] = result.metrics.overall()
        row['n'] = result.metrics.n
        rows.append(row)
        logging.info(f"[ablate] {run_id}: avg={row['avg']:.4f}")
    return rows


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    """Media sobre semillas por variante, en el orden de las filas"""
    table = (runs.groupby(['order', 'variant'])[SCORE_COLUMNS].mean()
             .reset_index().sort_values('order'))
    seeds = runs.groupby('variant')['seed'].nunique()
    table['n_seeds'] = table['variant'].map(seeds).astype(int)
    return table[['variant'] + SCORE_COLUMNS + ['n_seeds']].reset_index(drop=True)


def run_ablation(cfg: RunConfig, workers: int = 1) -> AblationResult:
    """
    Ejecuta la matriz completa (variantes x semillas)

    Args:
        cfg: Configuración base (modelo completo)
        workers: Procesos en paralelo (1 = secuencial); se reparte por semilla

    Returns:
        AblationResult: Filas por ejecución y tabla resumen
    """
    start_time = datetime.now()
    variants = resolve_variants(cfg)
    seeds = cfg.ablation.seed_list()
    if not seeds:
        raise ConfigError("ablation.seeds está vacío")
    logging.info(f"Ablación: {len(variants)} variantes x {len(seeds)} semillas, {workers} proceso(s)")

    rows: List[Dict[str, Any]] = []
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed_rows in pool.map(run_seed, [cfg] * len(seeds), seeds, [variants] * len(seeds)):
                rows.extend(seed_rows)
    else:
        for seed in seeds:
            rows.extend(run_seed(cfg, seed, variants))

    runs = pd.DataFrame(rows).sort_values(['order', 'seed']).reset_index(drop=True)
    table = summarize(runs)
    log_run_stats('ablación', start_time, {
        'ejecuciones': len(runs),
        **{f"avg {r.variant}": float(r.avg) for r in table.itertuples(index=False)},
    })
    return AblationResult(runs=runs.drop(columns=['order']), table=table)


def write_tsv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    """TSV con 6 decimales, idéntico byte a byte entre ejecuciones"""
    path = Path(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(df.to_csv(sep='\t', index=False, float_format='%.6f', lineterminator='\n'))
    logging.info(f"TSV escrito: {path}")
    return path


def write_ablation(result: AblationResult, directory: Union[str, Path]) -> Tuple[Path, Path]:
    """Escribe ablation.tsv (resumen) y ablation_runs.tsv (por semilla)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    table_path = directory / 'ablation.tsv'
    runs_path = directory / 'ablation_runs.tsv'
    write_tsv(result.table, table_path)
    write_tsv(result.runs, runs_path)
    logging.info(f"Tabla de ablación escrita en {table_path}")
    return table_path, runs_path
