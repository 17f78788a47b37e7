"""Select the compiled tree kernels when available, else the numpy fallback.

Set ``MBTSHAP_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("MBTSHAP_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"


def get_kernels(name=None):
    """Return a kernel module by name (``"cython"``, ``"python"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels as compiled

        return compiled
    raise ValueError(f"unknown backend {name!r}")
