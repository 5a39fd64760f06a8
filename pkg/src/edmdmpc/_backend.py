"""Kernel backend selection.

The compiled extension is preferred; set ``EDMDMPC_PURE_PYTHON=1`` to force
the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("EDMDMPC_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as kernels
        BACKEND = "cython"
    except ImportError:  # extension not built
        kernels = _kernels_py
        BACKEND = "python"
