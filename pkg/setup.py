import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

openmp = [] if os.environ.get("MMGIBBS_NO_OPENMP") else ["-fopenmp"]

extensions = [
    Extension(
        "mmgibbs._kernels._ckernels",
        ["src/mmgibbs/_kernels/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"] + openmp,
        extra_link_args=openmp,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
