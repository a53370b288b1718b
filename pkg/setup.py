import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# optional: if the compiler (or OpenMP) is missing the package installs without the
# extension and kernels.py falls back to numpy
extensions = [
    Extension(
        "fastmetric._kernels",
        ["src/fastmetric/_kernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3", "-fno-math-errno", "-fopenmp"],
        extra_link_args=["-fopenmp"],
        optional=True,
    )
]

setup(ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}))
