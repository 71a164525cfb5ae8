"""Build script for the optional compiled training kernel.

The package is fully functional without the extension: fedcal._kernels
falls back to the numpy implementation when the compiled module is
missing. Compilation failures therefore downgrade to a warning instead
of aborting the install.
"""

import sys

import numpy
from setuptools import setup
from setuptools.errors import CCompilerError, ExecError, PlatformError

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


def extensions():
    if cythonize is None:
        return []
    from setuptools import Extension

    return cythonize(
        [
            Extension(
                "fedcal._kernels._fast",
                ["src/fedcal/_kernels/_fast.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )


def run(with_ext):
    setup(ext_modules=extensions() if with_ext else [])


try:
    run(with_ext=True)
except (CCompilerError, ExecError, PlatformError, SystemExit) as exc:
    sys.stderr.write(
        f"warning: compiled kernel build failed ({exc!r}); "
        "installing with the pure-numpy backend only\n"
    )
    run(with_ext=False)
