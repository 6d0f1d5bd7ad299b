import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# ANISOSOB_PORTABLE=1 builds without AVX2/FMA; the numpy fallback needs no build.
if os.environ.get("ANISOSOB_PORTABLE"):
    cflags, lflags = ["-O3"], []
else:
    cflags, lflags = ["-O3", "-ffast-math", "-mavx2", "-mfma"], ["-lmvec"]

extensions = [
    Extension(
        "anisosob._kernels",
        ["src/anisosob/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=cflags,
        extra_link_args=lflags,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
