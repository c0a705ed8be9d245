"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``LQMFG_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy implementations are used. :data:`BACKEND` names the
active choice.
"""

from __future__ import annotations

import os

from . import _kernels_py

_impl = _kernels_py
if os.environ.get("LQMFG_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as _impl  # noqa: F811
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
simpson_weights = _impl.simpson_weights
em_ensemble = _impl.em_ensemble


def kappa_profile(phi1, C, E, F, h):
    # the compiled kernel covers n <= 2, larger states use numpy
    if _impl is not _kernels_py and phi1.shape[-1] <= 2:
        return _impl.kappa_profile(phi1, C, E, F, h)
    return _kernels_py.kappa_profile(phi1, C, E, F, h)


__all__ = ["BACKEND", "simpson_weights", "em_ensemble", "kappa_profile"]
