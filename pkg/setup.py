"""Builds the optional compiled kernel for skip-gram negative sampling.

The package works without it: ``medspan.lexemb.kernels`` falls back to the
pure-Python implementation when the extension is missing.
"""
from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "medspan.lexemb._sgns",
                sources=["src/medspan/lexemb/_sgns.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
