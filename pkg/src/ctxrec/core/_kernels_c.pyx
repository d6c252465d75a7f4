# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Fused single-pass loops for the activation forward/backward pairs and the
Adam update. Semantics match ctxrec.core._kernels_py; tests assert parity.
Arrays arrive as C-contiguous float32 or float64; the fused-type entry
points dispatch on the buffer dtype at call time.
"""

import numpy as np

from libc.math cimport exp as c_exp, expf as c_expf
from libc.math cimport sqrt as c_sqrt
from libc.math cimport tanh as c_tanh, tanhf as c_tanhf

NAME = "cython"

ctypedef fused floating:
    float
    double


def _sigmoid_flat(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        if floating is float:
            for i in range(n):
                out[i] = <float>1.0 / (<float>1.0 + c_expf(-x[i]))
        else:
            for i in range(n):
                out[i] = 1.0 / (1.0 + c_exp(-x[i]))


def _tanh_flat(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        if floating is float:
            for i in range(n):
                out[i] = c_tanhf(x[i])
        else:
            for i in range(n):
                out[i] = c_tanh(x[i])


def _relu_flat(floating[::1] x, floating[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            out[i] = x[i] if x[i] > 0.0 else <floating>0.0


def _sigmoid_bwd_flat(floating[::1] y, floating[::1] gy, floating[::1] gx):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            gx[i] += gy[i] * y[i] * (<floating>1.0 - y[i])


def _tanh_bwd_flat(floating[::1] y, floating[::1] gy, floating[::1] gx):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            gx[i] += gy[i] * (<floating>1.0 - y[i] * y[i])


def _relu_bwd_flat(floating[::1] y, floating[::1] gy, floating[::1] gx):
    cdef Py_ssize_t i, n = y.shape[0]
    with nogil:
        for i in range(n):
            if y[i] > 0.0:
                gx[i] += gy[i]


def _adam_flat(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
               double t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double bc1 = 1.0 - beta1 ** t
    cdef double bc2 = 1.0 - beta2 ** t
    cdef double mi, vi
    with nogil:
        for i in range(n):
            mi = beta1 * <double>m[i] + (1.0 - beta1) * <double>g[i]
            vi = beta2 * <double>v[i] + (1.0 - beta2) * <double>g[i] * <double>g[i]
            m[i] = <floating>mi
            v[i] = <floating>vi
            p[i] = <floating>(<double>p[i] - lr * (mi / bc1) / (c_sqrt(vi / bc2) + eps))


def sigmoid(x):
    out = np.empty_like(x)
    _sigmoid_flat(x.reshape(-1), out.reshape(-1))
    return out


def tanh(x):
    out = np.empty_like(x)
    _tanh_flat(x.reshape(-1), out.reshape(-1))
    return out


def relu(x):
    out = np.empty_like(x)
    _relu_flat(x.reshape(-1), out.reshape(-1))
    return out


def sigmoid_backward(y, gy, gx):
    _sigmoid_bwd_flat(y.reshape(-1), gy.reshape(-1), gx.reshape(-1))


def tanh_backward(y, gy, gx):
    _tanh_bwd_flat(y.reshape(-1), gy.reshape(-1), gx.reshape(-1))


def relu_backward(y, gy, gx):
    _relu_bwd_flat(y.reshape(-1), gy.reshape(-1), gx.reshape(-1))


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    _adam_flat(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
               t, lr, beta1, beta2, eps)
