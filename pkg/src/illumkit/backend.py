"""Kernel backend selection.

The convolution and pooling inner loops exist twice: a numba ``@njit``
version and a pure-numpy (im2col + BLAS) version. The numpy path is the
default; ``ILLUMKIT_NUMBA=1`` selects the jitted loops, which win on
machines without a tuned BLAS (see ``benchmarks/bench_kernels.py`` for
the comparison). Both backends are deterministic run-to-run; they are
not required to agree bit-for-bit with each other.
"""

from __future__ import annotations

import os


def _numba_requested() -> bool:
    flag = os.environ.get("ILLUMKIT_NUMBA", "0").strip().lower()
    return flag in ("1", "true", "on", "yes")


_BACKEND_NAME = "numpy"

if _numba_requested():
    from . import kernels_numba as _kernels

    _BACKEND_NAME = "numba"
else:
    from . import kernels_numpy as _kernels


conv2d_forward = _kernels.conv2d_forward
conv2d_backward = _kernels.conv2d_backward
maxpool2x2_forward = _kernels.maxpool2x2_forward
maxpool2x2_backward = _kernels.maxpool2x2_backward


def backend_name() -> str:
    return _BACKEND_NAME


def worker_count() -> int:
    """Worker parallelism cap; ILLUMKIT_THREADS overrides the core count."""
    env = os.environ.get("ILLUMKIT_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            n = 1
        return max(1, n)
    return max(1, os.cpu_count() or 1)
