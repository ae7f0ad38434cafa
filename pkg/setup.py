"""Build script for the compiled kernel extension.

Project metadata lives in pyproject.toml. When Cython or a C compiler is
unavailable the extension is skipped and the package falls back to the
pure-Python kernels at import time.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DRLOGCON_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [Extension("drlogcon._native",
                       sources=["src/drlogcon/_native.pyx"],
                       include_dirs=[numpy.get_include()],
                       define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                       extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
