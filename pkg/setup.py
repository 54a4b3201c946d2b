from setuptools import Extension, setup

# The coordinate-descent kernel is optional: the package falls back to the
# pure-Python implementation in gridtopo._cd when the extension is absent.
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("gridtopo._cd_fast", ["src/gridtopo/_cd_fast.pyx"])],
        language_level="3",
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
