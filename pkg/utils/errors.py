"""
Excepciones del sistema CAD

Todas derivan de ValueError: son errores de datos o de configuración de
entrada, no fallos del intérprete.
"""
from typing import Iterable, Sequence


class ShapeError(ValueError):
    """Dimensiones incompatibles entre tensores"""

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            rendered = " vs ".join(str(tuple(s)) for s in shapes)
            message = f"{message}: {rendered}"
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class GradientError(ValueError):
    """Uso inválido del grafo de gradientes (backward no escalar, grad ausente)"""


class LabelError(ValueError):
    """Etiqueta fuera de rango"""


class ContextualConfigError(ValueError):
    """Configuración inválida del bloque contextual"""


class SamplerError(ValueError):
    """Error en la segmentación de cues o el muestreo de pares"""


class CheckpointError(ValueError):
    """Checkpoint ilegible o incompatible"""

    def __init__(self, message: str, names: Iterable[str] = ()):
        names = sorted(names)
        if names:
            message = f"{message}: {', '.join(names)}"
        super().__init__(message)
        self.names = names

    def __reduce__(self):
        return (type(self), (self.args[0], ()))


class ConfigError(ValueError):
    """Archivo o clave de configuración inválidos"""


class TrainingDivergedError(ValueError):
    """La pérdida dejó de ser finita durante el entrenamiento"""

    def __init__(self, phase: str, epoch: int, step: int, loss: float):
        super().__init__(
            f"Pérdida no finita en {phase}: epoch={epoch} step={step} loss={loss}"
        )
        self.phase = phase
        self.epoch = epoch
        self.step = step
        self.loss = loss

    def __reduce__(self):
        return (type(self), (self.phase, self.epoch, self.step, self.loss))


class AblationRunError(RuntimeError):
    """Fallo de una ejecución concreta dentro de la matriz de ablación"""

    def __init__(self, run_id: str, cause: BaseException):
        super().__init__(f"[{run_id}] {type(cause).__name__}: {cause}")
        self.run_id = run_id
        self.cause = cause

    def __reduce__(self):
        return (type(self), (self.run_id, self.cause))
