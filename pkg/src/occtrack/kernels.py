"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
implementation in ``_kernels_py`` is used. Setting ``OCCTRACK_PURE_PYTHON=1``
forces the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("OCCTRACK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND

lbp_association = _impl.lbp_association
subset_dp_marginals = _impl.subset_dp_marginals
interval_cover = _impl.interval_cover
range_max = _impl.range_max


def backends():
    """Return every importable backend module, python first."""
    mods = [_kernels_py]
    try:
        from . import _kernels
    except ImportError:
        return mods
    mods.append(_kernels)
    return mods
