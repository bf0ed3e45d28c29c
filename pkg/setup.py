import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "hmmafi._kernels",
        ["src/hmmafi/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
    )
]

if os.environ.get("HMMAFI_NO_EXT"):
    extensions = []

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
