"""Backend selection for the convolution kernels.

Two implementations exist: a compiled Cython extension (built at install
time) and a vectorized numpy fallback.  The choice is made once at import:

  * SPEXPLUS_KERNELS=py|numpy   force the numpy fallback
  * SPEXPLUS_KERNELS=cy|cython  require the extension (ImportError if absent)
  * unset                       use the extension when importable

Even with the extension loaded, not every call goes to compiled code.
Dense single-group convolutions (including 1x1) are BLAS-shaped and stay on
the numpy path, where measurements show them 10-30x faster than naive
loops; the compiled loops take the grouped/depthwise cases, which they win
by 1.2-2.3x because BLAS cannot be applied there directly.
`benchmarks/bench_kernels.py` reproduces those measurements over the shapes
this model actually runs.
"""

import os

import numpy as np

from . import _kernels_np as _np_impl

_cy_impl = None
_forced = os.environ.get("SPEXPLUS_KERNELS", "").strip().lower()
if _forced not in ("py", "python", "numpy"):
    try:
        from . import _convkernels as _cy_impl
    except ImportError:
        _cy_impl = None
        if _forced in ("cy", "cython"):
            raise ImportError(
                "SPEXPLUS_KERNELS=%s but the compiled extension is not built" % _forced
            )

def backend():
    """Name of the selected backend: 'cython' or 'numpy'."""
    return "cython" if _cy_impl is not None else "numpy"


def _use_compiled(Cout, cin_g, L, K, groups, dilation):
    return _cy_impl is not None and groups > 1 and L > 1


def out_frames(T, L, stride, dilation):
    """Frame count K = floor((T - ((L-1)*dilation + 1)) / stride) + 1."""
    return _np_impl._out_frames(T, L, stride, dilation)


def conv1d_forward(x, w, stride=1, dilation=1, groups=1):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w)
    Cout, cin_g, L = w.shape
    K = out_frames(x.shape[1], L, stride, dilation)
    if _use_compiled(Cout, cin_g, L, K, groups, dilation):
        return _cy_impl.conv1d_forward(x, w, stride, dilation, groups)
    return _np_impl.conv1d_forward(x, w, stride, dilation, groups)


def conv1d_grad_input(gy, w, stride=1, dilation=1, groups=1, T=None):
    gy = np.ascontiguousarray(gy)
    w = np.ascontiguousarray(w)
    Cout, cin_g, L = w.shape
    if _use_compiled(Cout, cin_g, L, gy.shape[1], groups, dilation):
        return _cy_impl.conv1d_grad_input(gy, w, stride, dilation, groups, T)
    return _np_impl.conv1d_grad_input(gy, w, stride, dilation, groups, T)


def conv1d_grad_weight(gy, x, stride=1, dilation=1, groups=1, L=None):
    gy = np.ascontiguousarray(gy)
    x = np.ascontiguousarray(x)
    Cout, K = gy.shape
    cin_g = x.shape[0] // groups
    if _use_compiled(Cout, cin_g, L, K, groups, dilation):
        return _cy_impl.conv1d_grad_weight(gy, x, stride, dilation, groups, L)
    return _np_impl.conv1d_grad_weight(gy, x, stride, dilation, groups, L)
