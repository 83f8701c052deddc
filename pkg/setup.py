import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("U1CORR_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "u1corr._ppkernel",
                ["src/u1corr/_ppkernel.pyx"],
                include_dirs=[np.get_include()],
                # finiteness is checked explicitly, so skip the C99 NaN/Inf
                # recovery in complex multiplication
                extra_compile_args=["-O3", "-fcx-limited-range"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
