# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 1-D convolution kernels.

Same contract as _kernels_np: conv1d_forward / conv1d_grad_input /
conv1d_grad_weight over C-contiguous float32 or float64 arrays.  Single
threaded on purpose — determinism matters more than parallel speed here.
"""

import numpy as np

cimport numpy as cnp

ctypedef fused floating:
    float
    double


def conv1d_forward(floating[:, ::1] x, floating[:, :, ::1] w,
                   int stride, int dilation, int groups):
    cdef Py_ssize_t Cin = x.shape[0], T = x.shape[1]
    cdef Py_ssize_t Cout = w.shape[0], cin_g = w.shape[1], L = w.shape[2]
    cdef Py_ssize_t span = (L - 1) * dilation + 1
    cdef Py_ssize_t K = (T - span) // stride + 1
    cdef Py_ssize_t cout_g = Cout // groups
    if floating is float:
        out = np.zeros((Cout, K), dtype=np.float32)
    else:
        out = np.zeros((Cout, K), dtype=np.float64)
    cdef floating[:, ::1] y = out
    cdef Py_ssize_t g, co, ci, ci_l, l, k, base
    cdef floating wv
    with nogil:
        for g in range(groups):
            for co in range(g * cout_g, (g + 1) * cout_g):
                for ci_l in range(cin_g):
                    ci = g * cin_g + ci_l
                    for l in range(L):
                        wv = w[co, ci_l, l]
                        base = l * dilation
                        for k in range(K):
                            y[co, k] += wv * x[ci, base + k * stride]
    return out


def conv1d_grad_input(floating[:, ::1] gy, floating[:, :, ::1] w,
                      int stride, int dilation, int groups, Py_ssize_t T):
    cdef Py_ssize_t Cout = gy.shape[0], K = gy.shape[1]
    cdef Py_ssize_t cin_g = w.shape[1], L = w.shape[2]
    cdef Py_ssize_t Cin = cin_g * groups
    cdef Py_ssize_t cout_g = Cout // groups
    if floating is float:
        out = np.zeros((Cin, T), dtype=np.float32)
    else:
        out = np.zeros((Cin, T), dtype=np.float64)
    cdef floating[:, ::1] gx = out
    cdef Py_ssize_t g, co, ci, ci_l, l, k, base
    cdef floating wv
    with nogil:
        for g in range(groups):
            for co in range(g * cout_g, (g + 1) * cout_g):
                for ci_l in range(cin_g):
                    ci = g * cin_g + ci_l
                    for l in range(L):
                        wv = w[co, ci_l, l]
                        base = l * dilation
                        for k in range(K):
                            gx[ci, base + k * stride] += wv * gy[co, k]
    return out


def conv1d_grad_weight(floating[:, ::1] gy, floating[:, ::1] x,
                       int stride, int dilation, int groups, Py_ssize_t L):
    cdef Py_ssize_t Cin = x.shape[0], T = x.shape[1]
    cdef Py_ssize_t Cout = gy.shape[0], K = gy.shape[1]
    cdef Py_ssize_t cin_g = Cin // groups
    cdef Py_ssize_t cout_g = Cout // groups
    if floating is float:
        out = np.zeros((Cout, cin_g, L), dtype=np.float32)
    else:
        out = np.zeros((Cout, cin_g, L), dtype=np.float64)
    cdef floating[:, :, ::1] gw = out
    cdef Py_ssize_t g, co, ci, ci_l, l, k, base
    cdef floating acc
    with nogil:
        for g in range(groups):
            for co in range(g * cout_g, (g + 1) * cout_g):
                for ci_l in range(cin_g):
                    ci = g * cin_g + ci_l
                    for l in range(L):
                        base = l * dilation
                        acc = 0
                        for k in range(K):
                            acc += gy[co, k] * x[ci, base + k * stride]
                        gw[co, ci_l, l] = acc
    return out
