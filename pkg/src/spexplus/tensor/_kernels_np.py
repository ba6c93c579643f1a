"""Vectorized numpy implementations of the 1-D convolution kernels.

These are the pure-Python fallback for the compiled extension.  The three
primitives below are the whole contract a backend has to provide:

  conv1d_forward      y[co,k]   = sum_{ci,l} w[co,ci,l] * x[ci, k*stride + l*dilation]
  conv1d_grad_input   gx[ci,t] += sum_{co,l,k: t = k*stride + l*dilation} w[co,ci,l] * gy[co,k]
  conv1d_grad_weight  gw[co,ci,l] = sum_k gy[co,k] * x[ci, k*stride + l*dilation]

Transposed convolution reuses grad_input/forward with the roles swapped, so
no fourth primitive is needed.  Grouped convolution indexes ci within the
group (ci = g*Cin_g + ci_local).
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _windows(x, L, K, stride, dilation):
    # View of shape [Cin, L, K]; x must be C-contiguous.
    s0, s1 = x.strides
    return as_strided(x, shape=(x.shape[0], L, K), strides=(s0, s1 * dilation, s1 * stride))


def _out_frames(T, L, stride, dilation):
    span = (L - 1) * dilation + 1
    return (T - span) // stride + 1


def conv1d_forward(x, w, stride, dilation, groups):
    Cin, T = x.shape
    Cout, cin_g, L = w.shape
    K = _out_frames(T, L, stride, dilation)
    if L == 1 and dilation == 1 and groups == 1:
        return np.ascontiguousarray(w[:, :, 0] @ x[:, : (K - 1) * stride + 1 : stride])
    if groups == Cin and cin_g == 1 and Cout == Cin:
        # Depthwise: accumulate one strided slice per tap.
        y = np.zeros((Cout, K), dtype=x.dtype)
        for tap in range(L):
            lo = tap * dilation
            y += w[:, 0, tap : tap + 1] * x[:, lo : lo + (K - 1) * stride + 1 : stride]
        return y
    win = _windows(x, L, K, stride, dilation)
    if groups == 1:
        return np.tensordot(w, win, axes=([1, 2], [0, 1]))
    wg = w.reshape(groups, Cout // groups, cin_g, L)
    wing = win.reshape(groups, cin_g, L, K)
    return np.ascontiguousarray(np.einsum("goil,gilk->gok", wg, wing).reshape(Cout, K))


def conv1d_grad_input(gy, w, stride, dilation, groups, T):
    Cout, K = gy.shape
    _, cin_g, L = w.shape
    Cin = cin_g * groups
    gx = np.zeros((Cin, T), dtype=gy.dtype)
    hi = (K - 1) * stride + 1
    if groups == Cin and cin_g == 1 and Cout == Cin:
        for tap in range(L):
            lo = tap * dilation
            gx[:, lo : lo + hi : stride] += w[:, 0, tap : tap + 1] * gy
        return gx
    if L == 1 and groups == 1:
        gx[:, :hi:stride] = w[:, :, 0].T @ gy
        return gx
    if groups == 1:
        m = np.tensordot(w, gy, axes=(0, 0))  # [Cin, L, K]
    else:
        wg = w.reshape(groups, Cout // groups, cin_g, L)
        gyg = gy.reshape(groups, Cout // groups, K)
        m = np.einsum("goil,gok->gilk", wg, gyg).reshape(Cin, L, K)
    # Taps are scattered sequentially; overlapping positions accumulate.
    for tap in range(L):
        lo = tap * dilation
        gx[:, lo : lo + hi : stride] += m[:, tap, :]
    return gx


def conv1d_grad_weight(gy, x, stride, dilation, groups, L):
    Cin, T = x.shape
    Cout, K = gy.shape
    cin_g = Cin // groups
    if groups == Cin and cin_g == 1 and Cout == Cin:
        gw = np.empty((Cout, 1, L), dtype=gy.dtype)
        for tap in range(L):
            lo = tap * dilation
            gw[:, 0, tap] = np.sum(gy * x[:, lo : lo + (K - 1) * stride + 1 : stride], axis=1)
        return gw
    if L == 1 and groups == 1:
        xs = np.ascontiguousarray(x[:, : (K - 1) * stride + 1 : stride])
        return (gy @ xs.T)[:, :, None]
    win = _windows(x, L, K, stride, dilation)
    if groups == 1:
        return np.tensordot(gy, win, axes=(1, 2))  # [Cout, Cin, L]
    gyg = gy.reshape(groups, Cout // groups, K)
    wing = win.reshape(groups, cin_g, L, K)
    return np.ascontiguousarray(np.einsum("gok,gilk->goil", gyg, wing).reshape(Cout, cin_g, L))
