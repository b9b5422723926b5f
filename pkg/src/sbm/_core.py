"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``SBM_PURE_PYTHON=1`` forces the fallback (useful for
benchmarking and for checking that both backends agree).
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if not os.environ.get("SBM_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"

smooth_step = _impl.smooth_step
smooth_step_deriv = _impl.smooth_step_deriv
smooth_step_inverse = _impl.smooth_step_inverse
wasserstein_1d = _impl.wasserstein_1d
maxcorr_rows = _impl.maxcorr_rows

__all__ = [
    "BACKEND",
    "smooth_step",
    "smooth_step_deriv",
    "smooth_step_inverse",
    "wasserstein_1d",
    "maxcorr_rows",
]
