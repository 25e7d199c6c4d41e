import os

import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# SVCPROBIT_NO_EXT=1 builds without the compiled core; the numpy fallback is used.
if os.environ.get("SVCPROBIT_NO_EXT"):
    ext_modules = []
else:
    extensions = [
        Extension(
            "svcprobit._core",
            ["src/svcprobit/_core.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3", "-fopenmp"],
            extra_link_args=["-fopenmp"],
        )
    ]
    ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
