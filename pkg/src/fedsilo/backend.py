"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementations
when it is missing or when ``FEDSILO_PURE=1`` is set. Both backends are
bit-compatible, so the choice only affects speed.
"""

import os

from . import _kernels_py

if os.environ.get("FEDSILO_PURE") == "1":
    _impl = _kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        COMPILED = True
    except ImportError:
        _impl = _kernels_py
        COMPILED = False

im2col3x3 = _impl.im2col3x3
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
