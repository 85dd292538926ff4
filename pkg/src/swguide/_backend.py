"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is imported. ``SWGUIDE_BACKEND=python`` forces the fallback.
"""

import os

from . import _pykernels

if os.environ.get("SWGUIDE_BACKEND", "").lower() == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

sqeuclidean_cost = _impl.sqeuclidean_cost
linear_sum_assignment = _impl.linear_sum_assignment
