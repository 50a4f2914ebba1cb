"""Select the compiled kernels when importable, else the numpy fallback.

Set ``MPUSKETCH_PURE=1`` to force the fallback.
"""
import os

from . import _fallback

fallback = _fallback

if os.environ.get("MPUSKETCH_PURE", "") not in ("", "0"):
    kernels = _fallback
    NAME = "python"
else:
    try:
        from . import _kernels as kernels
        NAME = "compiled"
    except ImportError:  # extension not built
        kernels = _fallback
        NAME = "python"


def compiled():
    """The compiled module, or None when it is unavailable."""
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels
