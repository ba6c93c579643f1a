"""Parameterized layers on top of the tensor core.

Every layer is a Module exposing `forward` plus a deterministic, hierarchical
enumeration of named parameters (and buffers for running statistics), which
is what the optimizer and the checkpoint format consume.

Initialization follows the usual defaults: Kaiming-uniform fan-in scaling
for conv/linear weights, zeros for biases, ones/zeros for norm gain/bias,
0.25 for the PReLU slope.  Epsilon is 1e-8 in all normalizations.
"""

import numpy as np

from .tensor import (
    Tensor,
    add,
    batch_norm_time,
    conv1d,
    conv1d_transpose,
    div,
    layer_norm_global,
    matvec,
    mul,
    prelu,
    sub,
)

EPSILON = 1e-8


class Module:
    """Base class: tracks sub-modules, parameters and buffers by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
            self._modules.pop(name, None)
        elif isinstance(value, Module):
            self._modules[name] = value
            self._params.pop(name, None)
        object.__setattr__(self, name, value)

    def register_buffer(self, name, array):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, mod in self._modules.items():
            yield from mod.named_buffers(prefix + name + ".")

    def modules(self):
        yield self
        for mod in self._modules.values():
            yield from mod.modules()

    def train(self, mode=True):
        for mod in self.modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def param_count(self):
        return sum(p.data.size for _, p in self.named_parameters())

    def state_dict(self):
        """Parameters and buffers as name -> ndarray, in registration order."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state(self, state):
        """Copy arrays into this module; names must match exactly."""
        own = {name: p.data for name, p in self.named_parameters()}
        own.update(self.named_buffers())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(
                f"state mismatch: missing={missing}, unexpected={unexpected}"
            )
        for name, arr in state.items():
            dst = own[name]
            if dst.shape != arr.shape:
                raise KeyError(f"shape mismatch for {name}: {dst.shape} vs {arr.shape}")
            dst[...] = arr


class ModuleList(Module):
    def __init__(self, mods=()):
        super().__init__()
        self._items = []
        for mod in mods:
            self.append(mod)

    def append(self, mod):
        setattr(self, str(len(self._items)), mod)
        self._items.append(mod)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, idx):
        return self._items[idx]

    def __len__(self):
        return len(self._items)


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = float(np.sqrt(6.0 / fan_in))
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


class ConvLayer(Module):
    """1-D convolution with explicit (left, right) zero padding."""

    def __init__(self, in_channels, out_channels, length, *, stride=1, dilation=1,
                 groups=1, bias=True, padding=(0, 0), rng, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.dilation = dilation
        self.groups = groups
        self.padding = tuple(padding)
        self.weight = _kaiming_uniform(
            rng, (out_channels, in_channels // groups, length),
            (in_channels // groups) * length, dtype)
        if bias:
            self.bias = Tensor(np.zeros((out_channels, 1), dtype=dtype), requires_grad=True)
        else:
            self.bias = None

    def forward(self, x):
        y = conv1d(x, self.weight, stride=self.stride, dilation=self.dilation,
                   groups=self.groups, pad=self.padding)
        if self.bias is not None:
            y = add(y, self.bias)
        return y


class ConvTransposeLayer(Module):
    """Transposed 1-D convolution: [C,K] -> [1,(K-1)*stride + length]."""

    def __init__(self, channels, length, *, stride=1, rng, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.weight = _kaiming_uniform(rng, (channels, 1, length), channels * length, dtype)

    def forward(self, x):
        return conv1d_transpose(x, self.weight, stride=self.stride)


class GlobalLayerNorm(Module):
    """Normalize over all channels and time steps; per-channel gain/bias."""

    def __init__(self, channels, eps=EPSILON, *, rng=None, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self.gain = Tensor(np.ones((channels, 1), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros((channels, 1), dtype=dtype), requires_grad=True)

    def forward(self, x):
        return layer_norm_global(x, self.gain, self.bias, self.eps)


class BatchNorm1d(Module):
    """Per-channel normalization over the time axis (batch-of-one convention).

    Train mode normalizes with the current batch statistics and folds them
    into the running buffers with `momentum`; eval mode normalizes with the
    running buffers only.  Before any update the running stats are the init
    values (mean 0, var 1), so early eval calls are well defined.
    """

    def __init__(self, channels, momentum=0.1, eps=EPSILON, *, rng=None, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gain = Tensor(np.ones((channels, 1), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros((channels, 1), dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros((channels, 1), dtype=dtype))
        self.register_buffer("running_var", np.ones((channels, 1), dtype=dtype))

    def forward(self, x):
        if self.training:
            if x.data.shape[1] < 2:
                raise ValueError("batch norm in train mode needs at least 2 time steps")
            out, mu, var = batch_norm_time(x, self.gain, self.bias, self.eps)
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mu
            self.running_var *= 1.0 - m
            self.running_var += m * var
            return out
        scale = np.sqrt(self.running_var + self.eps)
        normed = div(sub(x, Tensor(self.running_mean)), Tensor(scale))
        return add(mul(normed, self.gain), self.bias)


class PReLULayer(Module):
    """Parametric ReLU with one learned slope for the whole layer."""

    def __init__(self, init=0.25, *, rng=None, dtype=np.float32):
        super().__init__()
        self.slope = Tensor(np.full((1,), init, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return prelu(x, self.slope)


class Linear(Module):
    def __init__(self, in_features, out_features, *, bias=True, rng, dtype=np.float32):
        super().__init__()
        self.weight = _kaiming_uniform(rng, (out_features, in_features), in_features, dtype)
        if bias:
            self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True)
        else:
            self.bias = None

    def forward(self, v):
        out = matvec(self.weight, v)
        if self.bias is not None:
            out = add(out, self.bias)
        return out
