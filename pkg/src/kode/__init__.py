"""Kernel-ODE transport: diffeomorphic sampling maps from RKHS velocity
fields trained by minimum MMD."""

import os

# Cap internal parallelism before the numerical libraries are loaded.
_threads = os.environ.get("KODE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
