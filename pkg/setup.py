"""Build script for the compiled element-assembly kernels.

The extension is optional: when it fails to build or import, the package
falls back to the pure-numpy kernels in ``romflow.fem._kernels_py``.
Floating-point contraction is disabled so the compiled and interpreted
backends accumulate element contributions with identical rounding.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "romflow.fem._kernels",
        sources=["src/romflow/fem/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3", "-ffp-contract=off"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
