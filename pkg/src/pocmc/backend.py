"""Backend selection: compiled kernels when available, numpy otherwise.

The compiled extension is optional; ``POCMC_BACKEND=python`` forces the
numpy fallback even when the extension is importable (useful for the
cross-backend agreement tests and the benchmark).
"""

import os

from . import _kernels_py

if os.environ.get("POCMC_BACKEND", "").lower() == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def get_backend():
    """Name of the active kernel backend, ``"cython"`` or ``"python"``."""
    return BACKEND


def kernels(name=None):
    """Return the active kernel module, or a specific one by name."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")


accept_candidates = _impl.accept_candidates
filter_em_batch = _impl.filter_em_batch
filter_robust_batch = _impl.filter_robust_batch
closed_loop_batch = _impl.closed_loop_batch
