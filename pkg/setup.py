import os

from setuptools import setup

ext_modules = []
if not os.environ.get("NAGHDI_PURE_PYTHON"):
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize([
        Extension(
            "naghdi._core",
            ["src/naghdi/_core.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            language="c++",
        )
    ], language_level=3)

setup(ext_modules=ext_modules)
