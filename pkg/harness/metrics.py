"""
Tabla de precisión por ámbito (A, V, AV) y tipo de pregunta
"""

from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from synthetic.features import CATEGORIES, SCOPES

COLUMNS = ['scope', 'question_type', 'n', 'accuracy']
AVERAGE = 'avg'
OVERALL = 'all'


class MetricsTable:
    """
    Aciertos por (ámbito, tipo de pregunta)

    Solo se guardan los conteos; las precisiones y medias se recalculan en
    cada consulta.
    """

    def __init__(self, counts: pd.DataFrame):
        missing = {'scope', 'question_type', 'n', 'correct'} - set(counts.columns)
        if missing:
            raise ValueError(f"Faltan columnas en la tabla de métricas: {sorted(missing)}")
        if ((counts['correct'] < 0) | (counts['correct'] > counts['n'])).any():
            raise ValueError("Los aciertos deben estar entre 0 y n")
        self.counts = counts[['scope', 'question_type', 'n', 'correct']].reset_index(drop=True)

    @classmethod
    def from_predictions(cls, scopes: Sequence[str], question_types: Sequence[str],
                         predictions: np.ndarray, labels: np.ndarray) -> 'MetricsTable':
        """
        Construye la tabla a partir de predicciones y respuestas correctas

        Args:
            scopes: Ámbito de cada pregunta
            question_types: Tipo de cada pregunta
            predictions: Respuestas predichas
            labels: Respuestas correctas

        Returns:
            MetricsTable
        """
        predictions = np.asarray(predictions)
        labels = np.asarray(labels)
        if not len(scopes) == len(question_types) == predictions.size == labels.size:
            raise ValueError("Longitudes distintas entre ámbitos, tipos, predicciones y etiquetas")
        df = pd.DataFrame({
            'scope': list(scopes),
            'question_type': list(question_types),
            'hit': (predictions == labels).astype(np.int64),
        })
        counts = (df.groupby(['scope', 'question_type'])['hit']
                  .agg(n='size', correct='sum').reset_index())
        return cls(counts)

    @classmethod
    def from_tsv(cls, path: Union[str, Path]) -> 'MetricsTable':
        """Lee las filas por categoría de un TSV escrito con to_tsv"""
        df = pd.read_csv(path, sep='\t')
        df = df[(df['scope'] != OVERALL) & (df['question_type'] != AVERAGE)].copy()
        df['correct'] = np.rint(df['accuracy'] * df['n']).astype(np.int64)
        return cls(df)

    def _sorted(self, df: pd.DataFrame) -> pd.DataFrame:
        order_scope = {s: i for i, s in enumerate(SCOPES)}
        order_type = {c: i for i, c in enumerate(CATEGORIES)}
        return (df.assign(_s=df['scope'].map(order_scope).fillna(len(SCOPES)),
                          _t=df['question_type'].map(order_type).fillna(len(CATEGORIES)))
                .sort_values(['_s', 'scope', '_t', 'question_type'])
                .drop(columns=['_s', '_t']).reset_index(drop=True))

    def table(self) -> pd.DataFrame:
        """Filas (scope, question_type, n, accuracy)"""
        df = self._sorted(self.counts)
        df['accuracy'] = df['correct'] / df['n']
        return df[COLUMNS]

    def scope_averages(self) -> pd.DataFrame:
        """Media por ámbito, ponderada por número de preguntas"""
        grouped = self.counts.groupby('scope')[['n', 'correct']].sum().reset_index()
        grouped['question_type'] = AVERAGE
        grouped = self._sorted(grouped)
        grouped['accuracy'] = grouped['correct'] / grouped['n']
        return grouped[COLUMNS]

    def scope_accuracy(self, scope: str) -> float:
        rows = self.counts[self.counts['scope'] == scope]
        total = int(rows['n'].sum())
        return float(rows['correct'].sum()) / total if total else float('nan')

    def overall(self) -> float:
        total = int(self.counts['n'].sum())
        return float(self.counts['correct'].sum()) / total if total else float('nan')

    @property
    def n(self) -> int:
        return int(self.counts['n'].sum())

    def full_table(self) -> pd.DataFrame:
        """Filas por categoría, medias por ámbito y media global"""
        overall = pd.DataFrame([{'scope': OVERALL, 'question_type': AVERAGE, 'n': self.n,
                                 'accuracy': self.overall()}])
        return pd.concat([self.table(), self.scope_averages(), overall], ignore_index=True)

    def to_tsv(self, path: Optional[Union[str, Path]] = None) -> str:
        """TSV con precisión de 6 decimales; si se indica ruta, también se escribe"""
        text = self.full_table().to_csv(sep='\t', index=False, float_format='%.6f', lineterminator='\n')
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
        return text
