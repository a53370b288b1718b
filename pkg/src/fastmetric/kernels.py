"""Backend selection for the phase-1 kernels.

The compiled extension is used when importable. Setting ``FASTMETRIC_PURE=1``
forces the numpy fallback.
"""

import os

from . import _kernels_py

if os.environ.get("FASTMETRIC_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
phase1_epoch = _impl.phase1_epoch
pair_objective = _impl.pair_objective


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython' or 'numpy'), or the active one."""
    if name is None:
        return _impl
    if name == "numpy":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")
