"""Build script for the optional compiled kernel backend.

The package works without the extension (a numpy twin is selected at import
time), so a failed build degrades to the pure-Python backend instead of
failing the install.
"""

import os
import sys

from setuptools import Extension, setup


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:  # pragma: no cover - build environment issue
        print(f"skipping compiled kernels ({exc})", file=sys.stderr)
        return []
    if not os.path.exists("src/coproq/kernels/_cyops.pyx"):
        print("skipping compiled kernels (_cyops.pyx absent)", file=sys.stderr)
        return []
    ext = Extension(
        "coproq.kernels._cyops",
        sources=["src/coproq/kernels/_cyops.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-march=native"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": 3})


setup(ext_modules=extensions())
