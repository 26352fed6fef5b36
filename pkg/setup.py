import os

import numpy as np
from setuptools import setup

ext_modules = []
if os.environ.get("MINKALPHA_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "minkalpha._ckernels",
                    ["src/minkalpha/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # no Cython available; the pure-Python kernels are used
        ext_modules = []

setup(ext_modules=ext_modules)
