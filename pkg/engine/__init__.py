from engine.tensor import (
    Tensor, no_grad, matmul, softmax_lastdim, log_softmax_lastdim, relu, sigmoid,
    layer_norm_lastdim, reduce_mean, concat_lastdim, cross_entropy, backward, linear,
)
from engine.optim import ParamSet, AdamState, adam_step
