"""Kernel backend selection.

The compiled extension is used when it imports; set ``MINKALPHA_PURE=1``
to force the pure-Python fallback.
"""

import os

if os.environ.get("MINKALPHA_PURE", "") == "1":
    from minkalpha import _pykernels as _impl
else:
    try:
        from minkalpha import _ckernels as _impl
    except ImportError:  # extension not built
        from minkalpha import _pykernels as _impl

BACKEND = _impl.BACKEND
llt_conjugate_1d = _impl.llt_conjugate_1d
network_simplex = _impl.network_simplex

__all__ = ["BACKEND", "llt_conjugate_1d", "network_simplex"]
