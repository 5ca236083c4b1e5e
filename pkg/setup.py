"""Builds the optional compiled kernel extension.

The package works without it: farsight._kernels falls back to the numpy
implementations when the extension is absent.
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "farsight._kernels._native",
        ["src/farsight/_kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
