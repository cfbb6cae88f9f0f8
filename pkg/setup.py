"""Build script for the optional Cython extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time); building it just makes the Monte Carlo kernels
faster.  Compile in place with

    python setup.py build_ext --inplace
"""

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "pocmc._kernels",
        ["src/pocmc/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
