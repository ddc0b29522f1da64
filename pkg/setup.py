"""Builds the optional compiled kernel extension.

The package is fully functional without it (the pure numpy backend is
selected at import time); the extension only accelerates the hot inner
loops. Cython is required to build it, a missing compiler just skips it.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "defsim.kernels._accel",
                ["src/defsim/kernels/_accel.pyx"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
