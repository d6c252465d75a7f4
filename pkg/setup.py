"""Build script for the compiled kernel extension.

The package is fully functional without the extension: ctxrec.core.backend
falls back to the numpy kernels when the compiled module is missing, so
any build failure degrades to the pure-Python install instead of breaking
it.
"""

import sys

from setuptools import setup


def _extensions(fast_math: bool):
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        "src/ctxrec/core/_kernels_c.pyx",
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
    for ext in ext_modules:
        ext.include_dirs.append(numpy.get_include())
        if fast_math:
            # fast-math lets gcc vectorize the loops and call libmvec's
            # SIMD exp/tanh; non-finite values are screened at the tensor
            # layer, not inside the kernels
            ext.extra_compile_args = ["-O3", "-march=native", "-ffast-math"]
            ext.libraries = ["mvec", "m"]
        else:
            ext.extra_compile_args = ["-O2"]
    return ext_modules


def _failed(exc: BaseException) -> bool:
    # distutils wraps compiler/linker errors in SystemExit with a message
    return not (isinstance(exc, SystemExit) and exc.code in (0, None))


def _run():
    try:
        exts = _extensions(fast_math=True)
    except ImportError:
        setup(ext_modules=[])
        return
    try:
        setup(ext_modules=exts)
        return
    except BaseException as exc:
        if not _failed(exc):
            raise
        print("ctxrec: optimized kernel build failed; retrying portable flags",
              file=sys.stderr)
    try:
        setup(ext_modules=_extensions(fast_math=False))
    except BaseException as exc:
        if not _failed(exc):
            raise
        print("ctxrec: compiled kernels unavailable; installing numpy fallback only",
              file=sys.stderr)
        setup(ext_modules=[])


_run()
