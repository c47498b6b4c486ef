import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "lcrowd._kernels",
        ["src/lcrowd/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no fast-math and no FMA contraction: results must match the
        # pure-Python backend bit for bit
        extra_compile_args=["-O3", "-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
