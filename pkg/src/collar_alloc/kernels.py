"""Kernel backend selection.

The compiled extension is used when importable; setting
``COLLAR_ALLOC_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _fallback

BACKEND = "python"
if os.environ.get("COLLAR_ALLOC_BACKEND", "").lower() not in ("python", "numpy"):
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

riccati_sweep = _impl.riccati_sweep
contour_sums = _impl.contour_sums
