import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python fallback only
    ext_modules = []
else:
    import scipy  # noqa: F401  cython_blas.pxd must be importable

    ext_modules = cythonize(
        [
            Extension(
                "relabel._lstm_cy",
                ["src/relabel/_lstm_cy.pyx"],
                include_dirs=[np.get_include(), "src/relabel"],
                extra_compile_args=["-O3", "-fopenmp-simd"],
                libraries=["m"],
                optional=True,
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
