import os

import numpy as np
from setuptools import Extension, setup

# Building the compiled kernels is optional; the package falls back to pure Python.
ext_modules = []
if os.environ.get("PHYDEFORMER_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "phydeformer._kernels",
                    ["src/phydeformer/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
