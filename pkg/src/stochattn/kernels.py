"""Backend selection for the multinomial sampling kernels.

The compiled extension is used when it imports; otherwise the pure-Python
reference is used. Both produce identical counts for identical keys.
Set ``STOCHATTN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("STOCHATTN_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

multinomial_row = _impl.multinomial_row
multinomial_counts = _impl.multinomial_counts
multinomial_counts_multi = _impl.multinomial_counts_multi
derive_key = _kernels_py.derive_key
MASK64 = _kernels_py.MASK64
ZERO_PROB = _kernels_py.ZERO_PROB


def available_backends():
    """Names of backends importable in this environment."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Kernel module for ``name`` ("cython" or "python")."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
