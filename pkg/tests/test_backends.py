"""Parity between the compiled kernel backend and the numpy fallback."""

import subprocess
import sys

import numpy as np
import pytest

from ctxrec.core import _kernels_py as kpy
from ctxrec.core import backend_name

try:
    from ctxrec.core import _kernels_c as kc
except ImportError:
    kc = None

needs_ext = pytest.mark.skipif(kc is None, reason="compiled kernel extension not built")


@pytest.fixture(params=[np.float32, np.float64], ids=["f4", "f8"])
def arrays(request):
    rng = np.random.default_rng(42)
    x = rng.normal(size=(64, 17)).astype(request.param)
    gy = rng.normal(size=x.shape).astype(request.param)
    return x, gy


def _tol(dtype):
    return 1e-6 if dtype == np.float32 else 1e-12


@needs_ext
@pytest.mark.parametrize("op", ["sigmoid", "tanh", "relu"])
def test_forward_parity(arrays, op):
    x, _ = arrays
    a = getattr(kpy, op)(x)
    b = getattr(kc, op)(x)
    np.testing.assert_allclose(a, b, rtol=_tol(x.dtype), atol=_tol(x.dtype))


@needs_ext
@pytest.mark.parametrize("op", ["sigmoid", "tanh", "relu"])
def test_backward_parity(arrays, op):
    x, gy = arrays
    y = getattr(kpy, op)(x)
    ga = np.zeros_like(x)
    gb = np.zeros_like(x)
    getattr(kpy, f"{op}_backward")(y, gy, ga)
    getattr(kc, f"{op}_backward")(y, gy, gb)
    np.testing.assert_allclose(ga, gb, rtol=_tol(x.dtype), atol=_tol(x.dtype))


@needs_ext
def test_backward_kernels_accumulate(arrays):
    x, gy = arrays
    y = kc.tanh(x)
    g = np.ones_like(x)
    kc.tanh_backward(y, gy, g)
    expected = np.ones_like(x)
    kpy.tanh_backward(y, gy, expected)
    np.testing.assert_allclose(g, expected, rtol=_tol(x.dtype), atol=_tol(x.dtype))


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64], ids=["f4", "f8"])
def test_adam_parity_over_many_steps(dtype):
    rng = np.random.default_rng(3)
    shape = (37,)
    p1 = rng.normal(size=shape).astype(dtype)
    p2 = p1.copy()
    m1 = np.zeros(shape, dtype)
    m2 = np.zeros(shape, dtype)
    v1 = np.zeros(shape, dtype)
    v2 = np.zeros(shape, dtype)
    for t in range(1, 26):
        g = rng.normal(size=shape).astype(dtype)
        kpy.adam_update(p1, g, m1, v1, float(t), 1e-2, 0.9, 0.999, 1e-8)
        kc.adam_update(p2, g.copy(), m2, v2, float(t), 1e-2, 0.9, 0.999, 1e-8)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(p1, p2, rtol=tol, atol=tol)
    np.testing.assert_allclose(m1, m2, rtol=tol, atol=tol)
    np.testing.assert_allclose(v1, v2, rtol=tol, atol=tol)


def test_backend_name_is_known():
    assert backend_name() in ("python", "cython")


def test_forced_python_backend_selected_in_subprocess():
    code = "from ctxrec.core import backend_name; print(backend_name())"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin", "CTXREC_BACKEND": "python"},
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "python"


@needs_ext
def test_scalar_parameter_adam_update_shares_memory():
    # 0-d parameters are updated through a reshape(-1) view in both backends
    p = np.array(1.0)
    g = np.array(0.5)
    m = np.array(0.0)
    v = np.array(0.0)
    kc.adam_update(p, g, m, v, 1.0, 0.1, 0.9, 0.999, 1e-8)
    assert p != 1.0
