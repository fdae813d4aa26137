"""Builds the optional compiled superpixel kernels.

The package works without them (a numpy fallback is selected at import);
set SCENEDISTILL_PURE=1 to skip the extension build entirely.
"""
import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("SCENEDISTILL_PURE") == "1":
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "scenedistill._slic_cy",
        ["src/scenedistill/_slic_cy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
