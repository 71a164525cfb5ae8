"""Backend selection for the SGD training kernel.

The compiled extension is used when it imported cleanly; otherwise the
numpy reference implementation takes over with identical semantics.
Set FEDCAL_PURE_KERNELS=1 to force the numpy path (useful for
debugging and for benchmarking the two against each other).
"""

import os

from . import pure

_impl = None
if not os.environ.get("FEDCAL_PURE_KERNELS"):
    try:
        from . import _fast as _impl
    except ImportError:
        _impl = None
if _impl is None:
    _impl = pure

sgd_train = _impl.sgd_train
BACKEND = "pure" if _impl is pure else "compiled"


def backend_name():
    """Which kernel is live: 'compiled' or 'pure'."""
    return BACKEND
