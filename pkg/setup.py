import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None and os.environ.get("ROUNDREC_PURE_PYTHON") != "1":
    ext = Extension(
        "roundrec.compute.kernels._ckern",
        ["src/roundrec/compute/kernels/_ckern.pyx"],
        # Bit-compatibility with the pure-Python fallback: no fused
        # multiply-add, and no fusing cos+sin pairs into glibc sincos (its
        # results can differ from separate calls in the last ulp).
        extra_compile_args=["-O3", "-ffp-contract=off", "-fno-builtin-sin",
                            "-fno-builtin-cos"],
    )
    # Build failures degrade to the pure-Python backend instead of failing install.
    ext.optional = True
    ext_modules = cythonize([ext], compiler_directives={"language_level": "3"})

setup(ext_modules=ext_modules)
