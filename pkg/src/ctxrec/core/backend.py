"""Kernel backend selection.

The hot inner loops exist twice: a Cython extension (``_kernels_c``) and a
pure-numpy fallback (``_kernels_py``). The compiled module is preferred when
importable; ``CTXREC_BACKEND`` overrides the choice:

    auto    use the extension if present, else numpy  (default)
    cython  require the extension, fail loudly if missing
    python  force the numpy fallback

``benchmarks/bench_backends.py`` compares the two.
"""

import os

from ..errors import ConfigError
from . import _kernels_py

_REQUESTED = os.environ.get("CTXREC_BACKEND", "auto").lower()

if _REQUESTED not in ("auto", "cython", "python"):
    raise ConfigError(
        f"CTXREC_BACKEND must be auto, cython or python, got {_REQUESTED!r}"
    )

kernels = _kernels_py
if _REQUESTED in ("auto", "cython"):
    try:
        from . import _kernels_c  # compiled at install time; absent on pure installs

        kernels = _kernels_c
    except ImportError:
        if _REQUESTED == "cython":
            raise ConfigError(
                "CTXREC_BACKEND=cython but the compiled extension is not "
                "importable; build it with `pip install -e .` or "
                "`python setup.py build_ext --inplace`"
            ) from None


def backend_name() -> str:
    """Name of the kernel backend selected at import ('cython' or 'python')."""
    return kernels.NAME
