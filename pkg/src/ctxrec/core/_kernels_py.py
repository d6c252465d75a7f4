"""Pure-numpy kernel backend.

Reference implementations for the hot inner loops. The compiled backend in
``_kernels_c.pyx`` mirrors these signatures exactly; parity between the two
is asserted in tests/test_backends.py.

All backward kernels *accumulate* into ``gx`` (+=), matching the additive
gradient convention of the tape.
"""

import numpy as np

NAME = "python"


def sigmoid(x):
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def sigmoid_backward(y, gy, gx):
    gx += gy * y * (1.0 - y)


def tanh(x):
    return np.tanh(x)


def tanh_backward(y, gy, gx):
    gx += gy * (1.0 - y * y)


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(y, gy, gx):
    gx += np.where(y > 0.0, gy, 0.0)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """Bias-corrected Adam step, in place on p/m/v (flat contiguous arrays)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)
