import numpy as np
from setuptools import Extension, setup

# The compiled kernel is optional: the package falls back to the pure-numpy
# implementation in dualpotts._kernels._fallback when the extension is absent.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "dualpotts._kernels._core",
                ["src/dualpotts/_kernels/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
