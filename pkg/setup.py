# Builds the compiled splatting kernels. The package works without them
# (a NumPy fallback is selected at import), so a failed compile is not fatal:
# build with FAITHSPLAT_NO_EXT=1 to skip the extension entirely.
import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FAITHSPLAT_NO_EXT"):
    import numpy
    from Cython.Build import cythonize

    ext = Extension(
        "faithsplat._kernels._splat_cy",
        sources=["src/faithsplat/_kernels/_splat_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize(
        [ext],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
