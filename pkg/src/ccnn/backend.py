"""Select the direct-convolution backend at import time.

The compiled extension is preferred when it imported cleanly; setting
``CCNN_PURE_PYTHON=1`` forces the numpy fallback.  Both backends expose
conv1d_full / conv1d_depthwise / conv2d_full / conv2d_depthwise with
identical semantics, so they can be benchmarked against each other.
"""

import os

from . import _direct_np

if os.environ.get("CCNN_PURE_PYTHON", "") == "1":
    _ext = None
else:
    try:
        from . import _direct as _ext
    except ImportError:
        _ext = None

HAS_EXT = _ext is not None
direct = _ext if HAS_EXT else _direct_np
direct_fallback = _direct_np


def backend_name() -> str:
    return "ext" if HAS_EXT else "numpy"
