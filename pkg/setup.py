import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    # pure-Python kernels are used when the extension is absent
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "evspike._ckernels",
                ["src/evspike/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
