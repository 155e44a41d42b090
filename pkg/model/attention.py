"""
Atención multi-cabeza y bloque de atención cruzada (CAB)

CAB: f_a = MHA(q, k, v); r2 = relu(fc2(relu(fc1(f_a)))); f_n = norm(f_a + r2)
"""

from dataclasses import dataclass

import numpy as np

from engine.optim import ParamSet, init_linear, uniform_init
from engine.tensor import (
    Tensor, add, layer_norm_lastdim, linear, matmul, relu, reshape,
    softmax_lastdim, swap_last, transpose,
)
from utils.errors import ConfigError, ShapeError


@dataclass
class CabConfig:
    """Dimensión del modelo y número de cabezas (claves model.dim, model.heads)"""
    model_dim: int = 64
    num_heads: int = 4

    def __post_init__(self):
        if self.model_dim < 1 or self.num_heads < 1:
            raise ConfigError(f"model.dim y model.heads deben ser positivos: {self.model_dim}, {self.num_heads}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(f"model.dim ({self.model_dim}) no es divisible por model.heads ({self.num_heads})")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


@dataclass
class CabWeights:
    """Vista sobre los tensores de un CAB dentro de un ParamSet"""
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor
    gamma: Tensor
    beta: Tensor

    @classmethod
    def from_params(cls, params: ParamSet, prefix: str) -> 'CabWeights':
        return cls(
            wq=params[f"{prefix}.attn.wq"],
            wk=params[f"{prefix}.attn.wk"],
            wv=params[f"{prefix}.attn.wv"],
            wo=params[f"{prefix}.attn.wo"],
            fc1_w=params[f"{prefix}.fc1.w"],
            fc1_b=params[f"{prefix}.fc1.b"],
            fc2_w=params[f"{prefix}.fc2.w"],
            fc2_b=params[f"{prefix}.fc2.b"],
            gamma=params[f"{prefix}.norm.gamma"],
            beta=params[f"{prefix}.norm.beta"],
        )


@dataclass
class CabTrace:
    """Salidas intermedias de un CAB, todas [B, L_q, d]"""
    f_a: Tensor
    r1: Tensor
    r2: Tensor
    f_f: Tensor
    f_n: Tensor


def init_cab(params: ParamSet, prefix: str, cfg: CabConfig, rng: np.random.Generator) -> None:
    """Registra los tensores de un CAB bajo `prefix`"""
    d = cfg.model_dim
    for name in ('wq', 'wk', 'wv', 'wo'):
        params[f"{prefix}.attn.{name}"] = uniform_init(rng, (d, d), d)
    init_linear(params, f"{prefix}.fc1", d, d, rng)
    init_linear(params, f"{prefix}.fc2", d, d, rng)
    params[f"{prefix}.norm.gamma"] = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
    params[f"{prefix}.norm.beta"] = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    batch, length, d = x.shape
    return transpose(reshape(x, (batch, length, num_heads, d // num_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    batch, heads, length, head_dim = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (batch, length, heads * head_dim))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, w: CabWeights, num_heads: int,
                         return_weights: bool = False):
    """
    Atención multi-cabeza escalada: softmax(Q K^T / sqrt(d/h)) V por cabeza

    Args:
        q: Consultas [B, Lq, d]
        k: Claves [B, Lk, d]
        v: Valores [B, Lk, d]
        w: Pesos del CAB
        num_heads: Número de cabezas
        return_weights: Devolver también los pesos de atención [B, h, Lq, Lk]

    Returns:
        Tensor [B, Lq, d] (y los pesos si return_weights)
    """
    d = w.wq.shape[0]
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("q, k, v deben ser [B, L, d]", q.shape, k.shape, v.shape)
    if q.shape[-1] != d or k.shape[-1] != d or v.shape[-1] != d:
        raise ShapeError(f"Dimensión distinta de model_dim={d}", q.shape, k.shape, v.shape)
    if k.shape[:2] != v.shape[:2] or k.shape[1] < 1:
        raise ShapeError("Claves y valores incompatibles", k.shape, v.shape)
    if q.shape[0] != k.shape[0]:
        raise ShapeError("Tamaño de lote distinto entre consulta y claves", q.shape, k.shape)
    if d % num_heads != 0:
        raise ShapeError(f"model_dim={d} no divisible entre {num_heads} cabezas")

    head_dim = d // num_heads
    queries = _split_heads(matmul(q, w.wq), num_heads)
    keys = _split_heads(matmul(k, w.wk), num_heads)
    values = _split_heads(matmul(v, w.wv), num_heads)

    scores = matmul(queries, swap_last(keys)) * (1.0 / np.sqrt(head_dim))
    weights = softmax_lastdim(scores)
    context = _merge_heads(matmul(weights, values))
    out = matmul(context, w.wo)
    if return_weights:
        return out, weights
    return out


def cab_forward(q: Tensor, k: Tensor, v: Tensor, w: CabWeights, num_heads: int,
                trace: bool = False):
    """
    Bloque de atención cruzada con rama feed-forward residual y post-norm

    Returns:
        Tensor f_n [B, Lq, d], o (f_n, CabTrace) si trace
    """
    f_a = multi_head_attention(q, k, v, w, num_heads)
    r1 = relu(linear(f_a, w.fc1_w, w.fc1_b))
    r2 = relu(linear(r1, w.fc2_w, w.fc2_b))
    f_f = add(f_a, r2)
    f_n = layer_norm_lastdim(f_f, w.gamma, w.beta)
    if trace:
        return f_n, CabTrace(f_a=f_a, r1=r1, r2=r2, f_f=f_f, f_n=f_n)
    return f_n
