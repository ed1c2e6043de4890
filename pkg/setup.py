from setuptools import Extension, setup
from Cython.Build import cythonize

ext_modules = [
    Extension(
        "fabmatch.kernels.cy_backend",
        sources=["src/fabmatch/kernels/cy_backend.pyx"],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(ext_modules, language_level=3))
