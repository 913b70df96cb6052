"""Build script for the optional Cython kernels.

The compiled extension is optional: if Cython or a C compiler is missing the
package installs without it and ``smartloop.kernels`` falls back to numpy.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("SMARTLOOP_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        # no -ffast-math: both kernel paths must sum in the same order
        ext_modules = cythonize(
            [
                Extension(
                    "smartloop._ckernels",
                    ["src/smartloop/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O2"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
