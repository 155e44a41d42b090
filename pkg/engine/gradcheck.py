"""
Comprobación de gradientes por diferencias finitas centrales
"""

from typing import Callable, Dict, Sequence

import numpy as np

from engine.tensor import Tensor, backward


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, eps: float = 1e-3) -> np.ndarray:
    """
    Gradiente numérico de fn() respecto a `tensor` (se perturba in situ)

    Args:
        fn: Función sin argumentos que devuelve una pérdida escalar
        tensor: Tensor a perturbar
        eps: Paso de la diferencia central

    Returns:
        np.ndarray: Gradiente estimado, misma forma que `tensor`
    """
    tensor.data = np.ascontiguousarray(tensor.data)
    flat = tensor.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        plus = float(fn().data)
        flat[i] = original - eps
        minus = float(fn().data)
        flat[i] = original
        grad[i] = (plus - minus) / (2.0 * eps)
    return grad.reshape(tensor.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), con suelo para gradientes nulos"""
    diff = np.linalg.norm(np.asarray(analytic, dtype=np.float64) - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    eps: float = 1e-3) -> Dict[int, float]:
    """
    Compara gradientes analíticos y numéricos

    Args:
        fn: Función sin argumentos que construye el grafo y devuelve la pérdida
        tensors: Hojas a comprobar (requires_grad=True)
        eps: Paso de la diferencia central

    Returns:
        Dict[int, float]: Error relativo por posición de tensor
    """
    for tensor in tensors:
        tensor.grad = None
    backward(fn())
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64).copy() for t in tensors]
    errors = {}
    for i, tensor in enumerate(tensors):
        numeric = numerical_gradient(fn, tensor, eps)
        errors[i] = relative_error(analytic[i], numeric)
    return errors
