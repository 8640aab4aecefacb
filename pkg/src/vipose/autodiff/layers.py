"""Parameter containers for the layers in :mod:`functional`."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, dtype=np.float32):
        super().__init__(np.asarray(data, dtype=dtype), requires_grad=True, dtype=dtype)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, slope: float = 0.1) -> np.ndarray:
    gain = np.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * np.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks attributes to find parameters, buffers and child modules."""

    training = True

    def _children(self):
        for key, val in vars(self).items():
            if isinstance(val, (Parameter, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            else:
                yield from val.named_parameters(name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for key in getattr(self, "_buffer_names", ()):
            yield f"{prefix}{key}", getattr(self, key)
        for key, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{key}.")

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if own[name].shape != tuple(arr.shape):
                raise ValueError(f"{name}: shape {tuple(arr.shape)} != expected {own[name].shape}")
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=p.data.dtype)
        for name, buf in self.named_buffers():
            buf[...] = state[name]

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
        for key, val in self._children():
            if isinstance(val, Module):
                val.astype(dtype)
        for key in getattr(self, "_buffer_names", ()):
            setattr(self, key, getattr(self, key).astype(dtype))
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, rng, cin, cout, k, stride=1, pad=None, slope=0.1):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Parameter(kaiming_uniform(rng, (cout, cin, k, k), cin * k * k, slope))
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class Conv1d(Module):
    def __init__(self, rng, cin, cout, k, stride=1, pad=None, bias=True, slope=0.0):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Parameter(kaiming_uniform(rng, (cout, cin, k), cin * k, slope))
        self.bias = Parameter(np.zeros(cout)) if bias else None

    def forward(self, x):
        return F.conv1d(x, self.weight, self.bias, self.stride, self.pad)


class Linear(Module):
    def __init__(self, rng, fin, fout, slope=0.1, zero=False):
        w = np.zeros((fout, fin)) if zero else kaiming_uniform(rng, (fout, fin), fin, slope)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(fout))

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class BatchNorm1d(Module):
    _buffer_names = ("running_mean", "running_var")

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)

    def forward(self, x):
        return F.batch_norm_1d(x, self.gamma, self.beta, self.running_mean, self.running_var,
                               self.training, self.momentum, self.eps)
