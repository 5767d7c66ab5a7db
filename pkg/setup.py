"""Build hooks for the optional compiled sweep kernel.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so any failure here downgrades to a pure-Python
install instead of aborting.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hj_strata._sweep_core",
                sources=["src/hj_strata/_sweep_core.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "language_level": "3",
        },
    )
except Exception as exc:  # pragma: no cover - exercised only on broken toolchains
    print(f"hj-strata: skipping compiled kernel ({exc}); pure-Python fallback will be used")
    ext_modules = []

setup(ext_modules=ext_modules)
