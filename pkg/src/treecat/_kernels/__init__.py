"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``TREECAT_KERNELS=python``
to force the fallback (``cython`` makes a missing extension an error).
"""

import os

from . import _pure

_choice = os.environ.get("TREECAT_KERNELS", "auto").lower()

if _choice == "python":
    _impl = _pure
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        if _choice == "cython":
            raise
        _impl = _pure

BACKEND = _impl.BACKEND
edt_squared = _impl.edt_squared
kernel_max = _impl.kernel_max
greedy_select = _impl.greedy_select

__all__ = ["BACKEND", "edt_squared", "kernel_max", "greedy_select", "available_backends"]


def available_backends():
    """Modules implementing the kernels, keyed by backend name."""
    out = {"python": _pure}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
