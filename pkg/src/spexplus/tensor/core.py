"""Dense float tensors with tape-based reverse-mode automatic differentiation.

The op set is exactly what the extraction network needs: elementwise
arithmetic with a restricted broadcast rule (python scalars, 0-d tensors,
and per-channel [C,1] columns repeated over time), 1-D convolution and its
transpose, a few reductions/activations, and concatenation/slicing along
the channel and time axes.  No general N-d broadcasting.

Forward ops record a backward rule on a global tape while gradients are
enabled.  `backward(loss)` replays the tape in reverse once; the tape is
then consumed and a fresh one starts recording.  Everything is single
threaded and deterministic for fixed inputs.

Training runs in float32; gradient-check tests build float64 tensors to
separate autodiff bugs from roundoff.
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels

DEFAULT_DTYPE = np.float32

# When enabled every forward op asserts its output is finite.
_debug_checks = bool(int(os.environ.get("SPEXPLUS_DEBUG", "0") or 0))


def set_debug_checks(enabled):
    global _debug_checks
    _debug_checks = bool(enabled)


class AutodiffError(RuntimeError):
    """Misuse of the tape or an op contract violation."""


class NonFiniteError(ArithmeticError):
    """A forward op produced NaN/Inf from finite inputs (debug mode)."""


class Tape:
    """Ordered record of forward ops; replayed in reverse exactly once."""

    def __init__(self):
        self._entries = []  # (output Tensor, backward fn)
        self.consumed = False

    def __len__(self):
        return len(self._entries)

    def backward(self, loss):
        if self.consumed:
            raise AutodiffError("tape already consumed; re-run the forward pass first")
        self.consumed = True
        loss.grad = np.ones_like(loss.data)
        for out, rule in reversed(self._entries):
            if out.grad is not None:
                rule(out.grad)
        self._entries.clear()


_active_tape = None
_grad_enabled = True


def _tape():
    global _active_tape
    if _active_tape is None or _active_tape.consumed:
        _active_tape = Tape()
    return _active_tape


class no_grad:
    """Context manager: forward ops inside record nothing."""

    def __enter__(self):
        global _grad_enabled
        self._prev, _grad_enabled = _grad_enabled, False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, (np.ndarray, np.generic)) and data.dtype in (
            np.float32, np.float64,
        ):
            # Preserve float width; np.generic covers 0-d arithmetic results.
            arr = np.asarray(data)
        else:
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def __float__(self):
        if self.data.size != 1:
            raise TypeError("only size-1 tensors convert to float")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def backward(loss):
    """Populate .grad on every requires_grad tensor reachable from `loss`."""
    if not isinstance(loss, Tensor):
        raise AutodiffError("backward expects a Tensor")
    if loss.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise AutodiffError("loss has no recorded tape (nothing requires grad?)")
    loss._tape.backward(loss)


def _result(data, requires, rule):
    if _debug_checks and not np.all(np.isfinite(data)):
        raise NonFiniteError("forward op produced a non-finite value")
    out = Tensor(data, requires_grad=requires and _grad_enabled)
    if out.requires_grad:
        tape = _tape()
        out._tape = tape
        tape._entries.append((out, rule))
    return out


def _accum(t, g):
    # First contribution may adopt `g` when it is a fresh array; views and
    # forwarded upstream grads (owndata=False by convention: rules pass
    # g[...] instead of g) are copied so later += cannot corrupt a sibling.
    if t.grad is None:
        t.grad = g if g.flags.owndata else np.array(g)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _as_operand(b, like):
    """Return (ndarray, Tensor-or-None) for the right operand."""
    if isinstance(b, Tensor):
        if b.data.dtype != like.data.dtype:
            raise AutodiffError(
                f"dtype mismatch: {like.data.dtype.name} vs {b.data.dtype.name}"
            )
        return b.data, b
    return np.asarray(b, dtype=like.data.dtype), None


def _check_broadcast(a_shape, b_shape):
    if b_shape == a_shape or b_shape == () or b_shape == (1,):
        return
    if len(a_shape) == 2 and b_shape == (a_shape[0], 1):
        return
    raise AutodiffError(f"cannot broadcast operand {b_shape} onto {a_shape}")


def _reduce_to(g, shape):
    """Sum a full-shaped gradient back down to a broadcast operand's shape."""
    if g.shape == shape:
        return g
    if shape == ():
        return np.array(g.sum())
    if shape == (1,):
        return g.sum().reshape(1)
    return g.sum(axis=1, keepdims=True)  # [C,1] over time


def _binary(a, b, fwd, da, db):
    bd, bt = _as_operand(b, a)
    _check_broadcast(a.data.shape, bd.shape)
    requires = a.requires_grad or (bt is not None and bt.requires_grad)
    ad = a.data

    def rule(g):
        if a.requires_grad:
            arr = da(g, ad, bd)
            _accum(a, g[...] if arr is g else arr)
        if bt is not None and bt.requires_grad:
            arr = _reduce_to(db(g, ad, bd), bd.shape)
            _accum(bt, g[...] if arr is g else arr)

    return _result(fwd(ad, bd), requires, rule)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b):
    return _binary(
        a, b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(a):
    def rule(g):
        _accum(a, -g)

    return _result(-a.data, a.requires_grad, rule)


# ---------------------------------------------------------------------------
# activations


def relu(a):
    mask = a.data > 0

    def rule(g):
        _accum(a, g * mask)

    return _result(np.where(mask, a.data, 0), a.requires_grad, rule)


def prelu(a, slope):
    """PReLU with a learned scalar negative slope (shape () or (1,))."""
    if slope.data.size != 1:
        raise AutodiffError("prelu slope must be a scalar tensor")
    s = slope.data.reshape(())
    neg = a.data <= 0
    # factor = 1 where x > 0 else s; reused by both forward and backward
    factor = np.where(neg, s, a.data.dtype.type(1))
    out = a.data * factor

    def rule(g):
        if a.requires_grad:
            _accum(a, g * factor)
        if slope.requires_grad:
            ds = np.sum(g * a.data, where=neg, dtype=np.float64)
            _accum(slope, np.asarray(ds, dtype=slope.data.dtype).reshape(slope.data.shape))

    return _result(out, a.requires_grad or slope.requires_grad, rule)


def exp(a):
    out_data = np.exp(a.data)

    def rule(g):
        _accum(a, g * out_data)

    return _result(out_data, a.requires_grad, rule)


def log(a):
    def rule(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), a.requires_grad, rule)


def sqrt(a):
    out_data = np.sqrt(a.data)

    def rule(g):
        _accum(a, g / (2 * out_data))

    return _result(out_data, a.requires_grad, rule)


def softmax(a):
    """Softmax over the last axis of a 1-D tensor; rows sum to 1."""
    shifted = a.data - a.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def rule(g):
        _accum(a, y * (g - np.dot(g, y)))

    return _result(y, a.requires_grad, rule)


# ---------------------------------------------------------------------------
# reductions


def sum_all(a):
    def rule(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _result(np.array(a.data.sum(), dtype=a.data.dtype), a.requires_grad, rule)


def mean_all(a):
    n = a.data.size

    def rule(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape))

    return _result(np.array(a.data.mean(), dtype=a.data.dtype), a.requires_grad, rule)


def sum_time(a):
    """[C,T] -> [C,1], summing the time axis."""
    def rule(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _result(a.data.sum(axis=1, keepdims=True), a.requires_grad, rule)


def mean_time(a):
    """[C,T] -> [C], collapsing the time axis."""
    T = a.data.shape[1]

    def rule(g):
        _accum(a, np.broadcast_to(g[:, None] / T, a.data.shape))

    return _result(a.data.mean(axis=1), a.requires_grad, rule)


def dot(a, b):
    """Inner product of two same-shape tensors, as a scalar tensor."""
    return sum_all(mul(a, b))


# ---------------------------------------------------------------------------
# shape ops


def concat_channels(parts):
    """Stack [Ci,T] tensors along the channel axis."""
    T = parts[0].data.shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != T:
            raise AutodiffError("concat_channels needs [C,T] tensors with equal T")
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])
    requires = any(p.requires_grad for p in parts)

    def rule(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accum(p, g[lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=0), requires, rule)


def slice_time(a, start, stop):
    def rule(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    return _result(np.ascontiguousarray(a.data[:, start:stop]), a.requires_grad, rule)


def pad_time(a, left, right):
    def rule(g):
        T = a.data.shape[1]
        _accum(a, g[:, left : left + T])

    return _result(np.pad(a.data, ((0, 0), (left, right))), a.requires_grad, rule)


def repeat_time(a, frames):
    """Repeat a [C] or [C,1] tensor along time to [C,frames]."""
    col = a.data.reshape(-1, 1)

    def rule(g):
        _accum(a, g.sum(axis=1).reshape(a.data.shape))

    return _result(np.ascontiguousarray(np.broadcast_to(col, (col.shape[0], frames))),
                   a.requires_grad, rule)


def pick(a, index):
    """Scalar element of a 1-D tensor; gradient is one-hot."""
    if not 0 <= index < a.data.shape[0]:
        raise AutodiffError(f"index {index} out of range for shape {a.data.shape}")

    def rule(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accum(a, full)

    return _result(np.array(a.data[index], dtype=a.data.dtype), a.requires_grad, rule)


def matvec(w, v):
    """[M,N] @ [N] -> [M]."""
    requires = w.requires_grad or v.requires_grad

    def rule(g):
        if w.requires_grad:
            _accum(w, np.outer(g, v.data))
        if v.requires_grad:
            _accum(v, w.data.T @ g)

    return _result(w.data @ v.data, requires, rule)


# ---------------------------------------------------------------------------
# fused normalizations (single tape entry each; the hand-derived backward
# includes the statistics' dependence on x)


def layer_norm_global(x, gain, bias, eps):
    """gain * (x - mu) / sqrt(var + eps) + bias with mu, var over all elements."""
    mu = x.data.mean(dtype=np.float64)
    var = x.data.var(dtype=np.float64)
    sigma = np.asarray(np.sqrt(var + eps), dtype=x.data.dtype)
    xhat = (x.data - np.asarray(mu, dtype=x.data.dtype)) / sigma
    out = gain.data * xhat + bias.data
    requires = x.requires_grad or gain.requires_grad or bias.requires_grad

    def rule(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=1, keepdims=True))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=1, keepdims=True))
        if x.requires_grad:
            u = gain.data * g
            gx = (u - u.mean() - xhat * (u * xhat).mean()) / sigma
            _accum(x, gx)

    return _result(out, requires, rule)


def batch_norm_time(x, gain, bias, eps):
    """Per-channel normalization over time; returns (out, mu, var).

    mu/var are plain [C,1] arrays of the batch statistics, for running-stat
    bookkeeping by the caller.
    """
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = (x.data - mu) / sigma
    out = gain.data * xhat + bias.data
    requires = x.requires_grad or gain.requires_grad or bias.requires_grad

    def rule(g):
        if gain.requires_grad:
            _accum(gain, (g * xhat).sum(axis=1, keepdims=True))
        if bias.requires_grad:
            _accum(bias, g.sum(axis=1, keepdims=True))
        if x.requires_grad:
            u = gain.data * g
            gx = (u - u.mean(axis=1, keepdims=True)
                  - xhat * (u * xhat).mean(axis=1, keepdims=True)) / sigma
            _accum(x, gx)

    return _result(out, requires, rule), mu, var


# ---------------------------------------------------------------------------
# convolution and pooling


def conv1d(x, w, stride=1, dilation=1, groups=1, pad=(0, 0)):
    """1-D convolution of [Cin,T] with [Cout,Cin/groups,L] -> [Cout,K].

    Padding is explicit (left, right) zeros on the time axis; the output
    frame count is K = floor((T + left + right - ((L-1)*dilation+1)) / stride) + 1.
    """
    if stride < 1 or dilation < 1:
        raise AutodiffError("stride and dilation must be positive")
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise AutodiffError("conv1d expects x:[Cin,T] and w:[Cout,Cin/groups,L]")
    if x.data.dtype != w.data.dtype:
        raise AutodiffError("conv1d input and weight dtypes must match")
    Cin, T = x.data.shape
    Cout, cin_g, L = w.data.shape
    if Cin % groups or Cout % groups or cin_g != Cin // groups:
        raise AutodiffError(f"incompatible groups={groups} for Cin={Cin}, Cout={Cout}")
    left, right = pad
    Tp = T + left + right
    span = (L - 1) * dilation + 1
    if span > Tp:
        raise AutodiffError(f"kernel span {span} exceeds padded input length {Tp}")
    xp = np.pad(x.data, ((0, 0), (left, right))) if (left or right) else x.data
    y = kernels.conv1d_forward(xp, w.data, stride, dilation, groups)
    requires = x.requires_grad or w.requires_grad

    def rule(g):
        if x.requires_grad:
            gxp = kernels.conv1d_grad_input(g, w.data, stride, dilation, groups, Tp)
            _accum(x, gxp[:, left : left + T] if (left or right) else gxp)
        if w.requires_grad:
            _accum(w, kernels.conv1d_grad_weight(g, xp, stride, dilation, groups, L))

    return _result(y, requires, rule)


def conv1d_transpose(x, w, stride=1):
    """Transposed 1-D convolution (overlap-add): [C,K] with [C,1,L] -> [1,T'].

    T' = (K-1)*stride + L.  This is the adjoint of conv1d(., w, stride) from
    a single-channel signal, which is what makes the decoder invert the
    encoder's framing.
    """
    if stride < 1:
        raise AutodiffError("stride must be positive")
    if x.data.ndim != 2 or w.data.ndim != 3 or w.data.shape[1] != 1:
        raise AutodiffError("conv1d_transpose expects x:[C,K] and w:[C,1,L]")
    if x.data.shape[0] != w.data.shape[0]:
        raise AutodiffError("channel count of input and weight must match")
    C, K = x.data.shape
    L = w.data.shape[2]
    T_out = (K - 1) * stride + L
    y = kernels.conv1d_grad_input(x.data, w.data, stride, 1, 1, T_out)
    requires = x.requires_grad or w.requires_grad

    def rule(g):
        if x.requires_grad:
            _accum(x, kernels.conv1d_forward(g, w.data, stride, 1, 1))
        if w.requires_grad:
            _accum(w, kernels.conv1d_grad_weight(x.data, g, stride, 1, 1, L))

    return _result(y, requires, rule)


def max_pool1d(x, kernel=3, stride=3):
    """Max pooling over time: [C,T] -> [C,(T-kernel)//stride + 1]."""
    C, T = x.data.shape
    if T < kernel:
        raise AutodiffError(f"time axis {T} shorter than pooling kernel {kernel}")
    K = (T - kernel) // stride + 1
    s0, s1 = x.data.strides
    win = np.lib.stride_tricks.as_strided(x.data, (C, K, kernel), (s0, s1 * stride, s1))
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None], axis=2)[:, :, 0]
    pos = arg + np.arange(K)[None, :] * stride

    def rule(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.arange(C)[:, None], pos), g)
        _accum(x, gx)

    return _result(np.ascontiguousarray(out), x.requires_grad, rule)
