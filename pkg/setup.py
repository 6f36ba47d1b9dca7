"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (pure numpy fallback is selected
at import time), so a missing compiler only costs speed.
"""

from setuptools import setup
from setuptools.extension import Extension

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "kgprompt._kernels._speedups",
                ["src/kgprompt/_kernels/_speedups.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
