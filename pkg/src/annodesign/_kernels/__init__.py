"""Numeric kernel backends.

The compiled extension is preferred when present; set ``ANNODESIGN_KERNELS``
to ``pure`` to force the numpy fallback or to ``cython`` to require the
extension (import error propagates).
"""

from __future__ import annotations

import os

from . import _pure

_requested = os.environ.get("ANNODESIGN_KERNELS", "auto").strip().lower()

if _requested == "pure":
    _impl = _pure
    BACKEND = "pure"
elif _requested == "cython":
    from . import _core as _impl

    BACKEND = "cython"
else:
    try:
        from . import _core as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"

topic_em_stats = _impl.topic_em_stats
quad_form_gains = _impl.quad_form_gains
mnir_sweep = _impl.mnir_sweep


def available_backends():
    """Name -> module map of importable backends (for tests and benchmarks)."""
    backends = {"pure": _pure}
    try:
        from . import _core

        backends["cython"] = _core
    except ImportError:
        pass
    return backends


__all__ = [
    "BACKEND",
    "available_backends",
    "mnir_sweep",
    "quad_form_gains",
    "topic_em_stats",
]
