"""Backend selection for the network kernels.

The compiled extension ``selmopf._kernels`` is used when it imports;
otherwise the numpy implementation in ``selmopf._kernels_py`` is used.
Setting ``SELMOPF_PURE_PYTHON=1`` forces the fallback.
"""

import os

from . import _kernels_py

try:
    if os.environ.get("SELMOPF_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

injections = _impl.injections
injection_jacobian = _impl.injection_jacobian
injection_hessian = _impl.injection_hessian
branch_flows = _impl.branch_flows
branch_hessian = _impl.branch_hessian


def backends():
    """Mapping of every importable backend name to its module."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
