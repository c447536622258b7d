"""Build script: compiles the optional simulation kernel extension.

The package works without the extension (a pure-Python kernel is selected at
import time), so any compilation failure downgrades to a warning instead of
breaking the install.
"""

import sys

from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "shwy.kernel._native",
                ["src/shwy/kernel/_native.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"shwy: skipping compiled kernel ({exc}); pure-Python fallback will be used\n")

setup(ext_modules=ext_modules)
