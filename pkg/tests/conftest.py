import sys
from pathlib import Path

import numpy as np
import pytest

# allow running from a checkout without installing (the compiled kernel
# backend then falls back to numpy unless built in place)
_src = Path(__file__).resolve().parent.parent / "src"
if _src.exists() and str(_src) not in sys.path:
    try:
        import ctxrec  # noqa: F401
    except ImportError:
        sys.path.insert(0, str(_src))


@pytest.fixture
def f64():
    """Run a test in float64 (oracle) precision."""
    from ctxrec.core import precision

    with precision(np.float64):
        yield
