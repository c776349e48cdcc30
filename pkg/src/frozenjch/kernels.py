"""Kernel backend selection.

The compiled extension is used when importable; set ``FROZENJCH_PURE_PYTHON=1``
to force the pure-Python implementations (tests run both).
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FROZENJCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

enumerate_configs = _impl.enumerate_configs
jch_triplets = _impl.jch_triplets
sc_rhs = _impl.sc_rhs
sc_integrate = _impl.sc_integrate

STATUS_OK = 0
STATUS_STEP_UNDERFLOW = 1
STATUS_MAX_STEPS = 2


def available_backends():
    """Names of the kernel modules importable in this environment."""
    names = {"python": _kernels_py}
    try:
        from . import _kernels as compiled
    except ImportError:
        pass
    else:
        names["cython"] = compiled
    return names
