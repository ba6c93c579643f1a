import numpy as np
from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to the numpy
# implementation when the extension is absent or fails to build.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "spexplus.tensor._convkernels",
                sources=["src/spexplus/tensor/_convkernels.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
