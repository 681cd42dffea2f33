import numpy as np
from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = cythonize(
    [
        Extension(
            "texweave._maxflow",
            sources=["src/texweave/_maxflow.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ],
    language_level="3",
)

setup(ext_modules=ext_modules)
