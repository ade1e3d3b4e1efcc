"""Build script for the compiled training kernels.

The package works without the extension (a NumPy fallback is selected at
import time), so a missing compiler only costs speed, not correctness.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "funcmean._backend._mlpcore",
                ["src/funcmean/_backend/_mlpcore.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
