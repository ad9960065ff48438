"""Build the optional compiled shooting core.

If Cython or a C compiler is unavailable the package still installs and runs
on the pure-Python kernels.
"""

import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

ext_modules = []
if os.environ.get("TUBEMPC_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "tubempc._ckernels",
                    ["src/tubempc/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing or broken
            print(f"warning: compiled kernels not built ({exc}); using pure-Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: failed to build {ext.name} ({exc}); using pure-Python fallback")


setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
