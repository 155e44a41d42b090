"""
Tensor denso con diferenciación automática en modo inverso

Cada operación guarda sus padres y una función de retropropagación; backward()
recorre el grafo en orden topológico inverso acumulando gradientes. El
almacenamiento es float32 por defecto y las reducciones acumulan en float64.
"""

import contextlib
import logging
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import GradientError, LabelError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence]


@contextlib.contextmanager
def no_grad():
    """Desactiva el registro del grafo (inferencia)"""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Array n-dimensional con ranura de gradiente opcional"""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None,
                 _parents: Tuple['Tensor', ...] = (), _op: str = ''):
        if isinstance(data, Tensor):
            dtype = dtype or data.dtype
            data = data.data
        if dtype is None:
            dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._op = _op

    # ------------------------------------------------------------------
    # Propiedades
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # Operadores
    # ------------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return tensor_mean(self, axis=axis, keepdims=keepdims)


###########################################
# UTILIDADES INTERNAS
###########################################

def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Convierte escalares y arrays en Tensor constante (sin gradiente)"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(value, dtype=dtype), dtype=dtype)


def _result_dtype(*tensors: Tensor):
    return np.result_type(*[t.data.dtype for t in tensors])


def _make(data: np.ndarray, parents: Tuple[Tensor, ...], op: str,
          backward: Callable[[np.ndarray], None]) -> Tensor:
    requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, dtype=data.dtype, _parents=parents if requires_grad else (), _op=op)
    out.requires_grad = requires_grad
    if requires_grad:
        out._backward = backward
    return out


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    grad = np.asarray(grad, dtype=tensor.data.dtype)
    if grad.shape != tensor.data.shape:
        grad = np.broadcast_to(grad, tensor.data.shape)
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype, copy=True)
    else:
        tensor.grad = tensor.grad + grad


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce un gradiente difundido a la forma original del operando"""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)), dtype=np.float64)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True, dtype=np.float64)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"Formas no difundibles en {op}", a.shape, b.shape)


###########################################
# OPERACIONES ELEMENTALES
###########################################

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, 'add')
    data = a.data + b.data

    def backward(grad):
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(grad, b.shape))

    return _make(data, (a, b), 'add', backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, 'sub')
    data = a.data - b.data

    def backward(grad):
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(-grad, b.shape))

    return _make(data, (a, b), 'sub', backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, 'mul')
    data = a.data * b.data

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(grad * a.data, b.shape))

    return _make(data, (a, b), 'mul', backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_shape(a, b, 'div')
    data = a.data / b.data

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(grad / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), 'div', backward)


def neg(a: Tensor) -> Tensor:
    def backward(grad):
        _accumulate(a, -grad)

    return _make(-a.data, (a,), 'neg', backward)


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    data = a.data ** exponent

    def backward(grad):
        _accumulate(a, grad * exponent * a.data ** (exponent - 1.0))

    return _make(data, (a,), f'pow{exponent}', backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(grad):
        _accumulate(a, grad * data)

    return _make(data, (a,), 'exp', backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(grad):
        _accumulate(a, grad / a.data)

    return _make(data, (a,), 'log', backward)


def relu(x: Tensor) -> Tensor:
    """max(0, x); el subgradiente en 0 es 0"""
    positive = x.data > 0
    data = np.where(positive, x.data, 0).astype(x.dtype)

    def backward(grad):
        _accumulate(x, grad * positive)

    return _make(data, (x,), 'relu', backward)


def sigmoid(x: Tensor) -> Tensor:
    """1 / (1 + e^-x), evaluada de forma estable para |x| grande"""
    z = np.exp(-np.abs(x.data))
    data = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)

    def backward(grad):
        _accumulate(x, grad * data * (1.0 - data))

    return _make(data, (x,), 'sigmoid', backward)


###########################################
# FORMA Y REDUCCIONES
###########################################

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        data = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("Reshape inválido", original, tuple(shape))

    def backward(grad):
        _accumulate(x, grad.reshape(original))

    return _make(data, (x,), 'reshape', backward)


def transpose(x: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))
    data = np.transpose(x.data, axes)

    def backward(grad):
        _accumulate(x, np.transpose(grad, inverse))

    return _make(data, (x,), 'transpose', backward)


def swap_last(x: Tensor) -> Tensor:
    """Intercambia los dos últimos ejes"""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"Dimensión inválida {axis} para tensor de rango {ndim}")
    return axis % ndim


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = _normalize_axis(axis, x.ndim)
    data = np.asarray(np.sum(x.data, axis=axis, keepdims=keepdims, dtype=np.float64), dtype=x.dtype)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        _accumulate(x, np.broadcast_to(grad, x.shape))

    return _make(data, (x,), 'sum', backward)


def tensor_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = _normalize_axis(axis, x.ndim)
        count = x.shape[axis]
    else:
        count = x.data.size
    data = np.asarray(np.mean(x.data, axis=axis, keepdims=keepdims, dtype=np.float64), dtype=x.dtype)

    def backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        _accumulate(x, np.broadcast_to(grad, x.shape) / count)

    return _make(data, (x,), 'mean', backward)


def reduce_mean(x: Tensor, dim: int) -> Tensor:
    """Media aritmética a lo largo de `dim`; el rango baja en uno"""
    return tensor_mean(x, axis=dim, keepdims=False)


def concat_lastdim(xs: Sequence[Tensor]) -> Tensor:
    """Concatena en la última dimensión preservando el orden"""
    if not xs:
        raise ShapeError("concat_lastdim requiere al menos un tensor")
    leading = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != leading:
            raise ShapeError("Dimensiones iniciales distintas en concat_lastdim", xs[0].shape, x.shape)
    if len(xs) == 1:
        return xs[0]
    dtype = _result_dtype(*xs)
    data = np.concatenate([x.data.astype(dtype, copy=False) for x in xs], axis=-1)
    bounds = np.cumsum([x.shape[-1] for x in xs])[:-1]

    def backward(grad):
        for x, piece in zip(xs, np.split(grad, bounds, axis=-1)):
            _accumulate(x, piece)

    return _make(data, tuple(xs), 'concat', backward)


###########################################
# ÁLGEBRA LINEAL
###########################################

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Producto matricial por lotes con difusión de las dimensiones de lote"""
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul requiere rango >= 2", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("Dimensiones internas incompatibles en matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("Dimensiones de lote incompatibles en matmul", a.shape, b.shape)
    data = np.matmul(a.data, b.data)

    def backward(grad):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape))

    return _make(data, (a, b), 'matmul', backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ W + b"""
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


###########################################
# NORMALIZACIONES Y PÉRDIDAS
###########################################

def softmax_lastdim(x: Tensor) -> Tensor:
    """Softmax estabilizado restando el máximo de cada fila"""
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("softmax_lastdim requiere una última dimensión no vacía", x.shape)
    shifted = x.data.astype(np.float64) - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = (e / e.sum(axis=-1, keepdims=True)).astype(x.dtype)

    def backward(grad):
        inner = np.sum(grad * data, axis=-1, keepdims=True, dtype=np.float64)
        _accumulate(x, data * (grad - inner))

    return _make(data, (x,), 'softmax', backward)


def log_softmax_lastdim(x: Tensor) -> Tensor:
    if x.ndim == 0 or x.shape[-1] < 1:
        raise ShapeError("log_softmax_lastdim requiere una última dimensión no vacía", x.shape)
    shifted = x.data.astype(np.float64) - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data64 = shifted - lse
    data = data64.astype(x.dtype)
    probs = np.exp(data64)

    def backward(grad):
        total = np.sum(grad, axis=-1, keepdims=True, dtype=np.float64)
        _accumulate(x, grad - probs * total)

    return _make(data, (x,), 'log_softmax', backward)


def layer_norm_lastdim(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """
    Normalización por capa sobre la última dimensión

    Args:
        x: Tensor de entrada
        gamma: Escala, con la forma de la última dimensión
        beta: Desplazamiento, con la forma de la última dimensión
        eps: Término de estabilidad (cubre el caso de varianza nula)

    Returns:
        Tensor: gamma * x_norm + beta
    """
    width = x.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError("gamma/beta no coinciden con la última dimensión", x.shape, gamma.shape, beta.shape)
    if width < 2:
        logging.warning(f"layer_norm_lastdim degenerado: última dimensión {width}")
    centered = x - tensor_mean(x, axis=-1, keepdims=True)
    variance = tensor_mean(centered * centered, axis=-1, keepdims=True)
    normalized = centered * power(variance + eps, -0.5)
    return normalized * gamma + beta


def _check_labels(labels: np.ndarray, n_classes: int, batch: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ShapeError("Etiquetas con forma inválida", labels.shape, (batch,))
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"Las etiquetas deben ser enteras, recibido {labels.dtype}")
    bad = labels[(labels < 0) | (labels >= n_classes)]
    if bad.size:
        raise LabelError(f"Etiqueta fuera de rango [0, {n_classes}): {int(bad[0])}")
    return labels.astype(np.int64)


def cross_entropy(logits: Tensor, target: Union[np.ndarray, Sequence[int]]) -> Tensor:
    """
    Entropía cruzada media del lote: -mean(log softmax(logits)[label])

    Args:
        logits: Tensor [B, K]
        target: Etiquetas enteras [B] en [0, K)

    Returns:
        Tensor: Escalar
    """
    if logits.ndim != 2:
        raise ShapeError("cross_entropy espera logits [B, K]", logits.shape)
    batch, n_classes = logits.shape
    labels = _check_labels(np.asarray(target), n_classes, batch)
    shifted = logits.data.astype(np.float64) - logits.data.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = log_probs[np.arange(batch), labels]
    data = np.asarray(-picked.mean(), dtype=logits.dtype)

    def backward(grad):
        probs = np.exp(log_probs)
        probs[np.arange(batch), labels] -= 1.0
        _accumulate(logits, probs * (float(grad) / batch))

    return _make(data, (logits,), 'cross_entropy', backward)


###########################################
# RETROPROPAGACIÓN
###########################################

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params=None) -> None:
    """
    Retropropaga desde una pérdida escalar

    Los gradientes se acumulan en las hojas que los requieren. Si se pasa un
    ParamSet, los parámetros que la pérdida no alcanza reciben gradiente cero.

    Args:
        loss (Tensor): Pérdida escalar
        params (ParamSet, optional): Parámetros del modelo
    """
    if loss.data.size != 1:
        raise GradientError(f"backward requiere una pérdida escalar, forma {loss.shape}")
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
        for node in reversed(_topological_order(loss)):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            if node._parents:
                # Los intermedios no conservan el gradiente
                node.grad = None
    if params is not None:
        for _, tensor in params.items():
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
