"""Build script for the optional compiled kernels.

If Cython or a C compiler is missing the package still installs and the
numpy fallback in ``bbbtraj._pykernels`` is used instead.
"""
import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("BBBTRAJ_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "bbbtraj._ckernels",
                    ["src/bbbtraj/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError as exc:  # pragma: no cover
        print(f"skipping compiled kernels: {exc}", file=sys.stderr)

setup(ext_modules=ext_modules)
