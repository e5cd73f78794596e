"""Builds the _core extension straight from the C++ sources.

CMake remains the primary build (and is what the test suite uses); this
setuptools path exists so `pip install .` works without extra tooling.
"""

from glob import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

ext = Pybind11Extension(
    "patchdb._core",
    sorted(glob("src/*.cpp")) + ["bindings/py_module.cpp"],
    include_dirs=["include", "vendor"],
    libraries=["z"],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
