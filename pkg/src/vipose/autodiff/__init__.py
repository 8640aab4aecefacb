"""Small reverse-mode autodiff core with the layers the pose network needs."""
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .functional import (
    ShapeError, batch_norm_1d, concat, conv1d, conv2d, correlation, flatten, leaky_relu, linear, relu, row_norm,
)
from .gradcheck import grad_check
from .layers import BatchNorm1d, Conv1d, Conv2d, Linear, Module, Parameter
from .optim import SGD, Adam, clip_grad_norm, cosine_lr, sgd_step
from .tensor import Tensor, no_grad
