import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "cumlr._ckernels",
        ["src/cumlr/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        # no -ffast-math / FMA contraction: results must match the numpy path
        extra_compile_args=["-O3", "-ffp-contract=off"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
