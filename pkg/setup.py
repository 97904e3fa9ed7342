import os

from setuptools import Extension, setup

# RECE_PURE_PYTHON=1 skips the compiled kernels; the package then runs on
# the numpy fallback selected at import time.
if os.environ.get("RECE_PURE_PYTHON"):
    ext_modules = []
else:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "rece.kernels._chunk_ops",
                ["src/rece/kernels/_chunk_ops.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
