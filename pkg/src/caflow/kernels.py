"""Kernel backend chosen at import time.

The compiled extension is used when it was built; otherwise the numpy
versions take over. Setting ``CAFLOW_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

try:
    if os.environ.get("CAFLOW_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python kernels requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

build_columns = _impl.build_columns
weight_step = _impl.weight_step
alive_step = _impl.alive_step
back_step = _impl.back_step
count_back_step = _impl.count_back_step

__all__ = [
    "BACKEND",
    "alive_step",
    "back_step",
    "build_columns",
    "count_back_step",
    "weight_step",
]
