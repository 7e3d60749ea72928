from setuptools import Extension, setup

import numpy as np

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rsirl.kernels._subgradient",
                ["src/rsirl/kernels/_subgradient.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython: the package still works through the pure-Python kernel.
    ext_modules = []

setup(ext_modules=ext_modules)
