"""
Conjuntos de parámetros, inicialización y optimizador Adam
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from engine.tensor import DEFAULT_DTYPE, Tensor
from utils.errors import CheckpointError, GradientError


class ParamSet:
    """
    Mapa ordenado nombre -> Tensor entrenable

    La iteración es siempre en orden lexicográfico de nombres.
    """

    def __init__(self, tensors: Optional[Mapping[str, Tensor]] = None):
        self._tensors: Dict[str, Tensor] = {}
        for name, tensor in (tensors or {}).items():
            self[name] = tensor

    def __setitem__(self, name: str, tensor: Tensor) -> None:
        if not isinstance(tensor, Tensor):
            tensor = Tensor(tensor)
        tensor.requires_grad = True
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self):
        return sorted(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._tensors[name]

    def zero_grad(self) -> None:
        for _, tensor in self.items():
            tensor.grad = np.zeros_like(tensor.data)

    def clear_grad(self) -> None:
        for _, tensor in self.items():
            tensor.grad = None

    def subset(self, prefixes: Sequence[str]) -> 'ParamSet':
        """Vista (mismos tensores) restringida a los nombres con alguno de los prefijos"""
        return ParamSet({n: t for n, t in self.items() if n.startswith(tuple(prefixes))})

    def astype(self, dtype) -> 'ParamSet':
        """Copia profunda con otro tipo de dato (p.ej. float64 para comprobar gradientes)"""
        return ParamSet({n: Tensor(t.data.astype(dtype), dtype=dtype) for n, t in self.items()})

    def copy(self) -> 'ParamSet':
        return self.astype(DEFAULT_DTYPE)

    def state(self) -> Dict[str, np.ndarray]:
        """Arrays por nombre, en orden lexicográfico"""
        return {n: t.data for n, t in self.items()}

    @classmethod
    def from_state(cls, state: Mapping[str, np.ndarray]) -> 'ParamSet':
        return cls({n: Tensor(np.array(a, dtype=DEFAULT_DTYPE)) for n, a in state.items()})

    def load_state(self, state: Mapping[str, np.ndarray], names: Optional[Sequence[str]] = None) -> None:
        """
        Copia en este conjunto los arrays indicados

        Args:
            state: Arrays de origen por nombre
            names: Nombres a copiar (por defecto, todos los de este conjunto)

        Raises:
            CheckpointError: Si falta algún nombre o no coincide la forma
        """
        names = list(names) if names is not None else self.names()
        missing = [n for n in names if n not in state]
        if missing:
            raise CheckpointError("Faltan tensores en el checkpoint", missing)
        mismatched = [n for n in names if tuple(np.shape(state[n])) != self[n].shape]
        if mismatched:
            raise CheckpointError("Formas incompatibles con la configuración", mismatched)
        for name in names:
            self[name] = Tensor(np.array(state[name], dtype=self[name].dtype, copy=True), dtype=self[name].dtype)

    def count(self) -> int:
        return int(sum(t.data.size for _, t in self.items()))


def uniform_init(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> Tensor:
    """Inicialización uniforme en ±1/sqrt(fan_in)"""
    bound = 1.0 / np.sqrt(max(int(fan_in), 1))
    return Tensor(rng.uniform(-bound, bound, size=tuple(shape)).astype(DEFAULT_DTYPE), requires_grad=True)


def init_linear(params: ParamSet, prefix: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, bias: bool = True) -> None:
    """Registra `<prefix>.w` [fan_in, fan_out] y opcionalmente `<prefix>.b`"""
    params[f"{prefix}.w"] = uniform_init(rng, (fan_in, fan_out), fan_in)
    if bias:
        params[f"{prefix}.b"] = uniform_init(rng, (fan_out,), fan_in)


@dataclass
class AdamState:
    """Momentos por parámetro y contador de pasos"""
    lr: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    u: Dict[str, np.ndarray] = field(default_factory=dict)
    k: int = 0


def adam_step(params: ParamSet, state: AdamState) -> ParamSet:
    """
    Un paso de Adam con corrección de sesgo; limpia los gradientes al terminar

    Args:
        params (ParamSet): Parámetros con gradientes ya calculados
        state (AdamState): Estado del optimizador (se actualiza in situ)

    Returns:
        ParamSet: Los mismos parámetros, actualizados

    Raises:
        GradientError: Si algún parámetro no tiene gradiente
    """
    missing = [name for name, tensor in params.items() if tensor.grad is None]
    if missing:
        raise GradientError(f"Parámetros sin gradiente: {', '.join(missing)}")

    state.k += 1
    correction1 = 1.0 - state.beta1 ** state.k
    correction2 = 1.0 - state.beta2 ** state.k

    for name, tensor in params.items():
        grad = tensor.grad.astype(np.float64)
        if name not in state.m:
            state.m[name] = np.zeros(tensor.shape, dtype=np.float64)
            state.u[name] = np.zeros(tensor.shape, dtype=np.float64)
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * grad
        state.u[name] = state.beta2 * state.u[name] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[name] / correction1
        u_hat = state.u[name] / correction2
        update = state.lr * m_hat / (np.sqrt(u_hat) + state.epsilon)
        tensor.data = (tensor.data - update).astype(tensor.dtype)
        tensor.grad = None

    if state.k == 1:
        logging.debug(f"Adam inicializado para {len(params)} tensores (lr={state.lr})")
    return params
