"""Backend selection for the skip-gram training kernel.

The compiled extension is preferred when it imported cleanly; the
pure-Python module is the fallback and the reference.  Set
``MEDSPAN_PURE_PYTHON=1`` to force the fallback (used by the parity tests
and the benchmark).  Both backends implement the same update sequence;
numerical agreement is within floating-point round-off, not bitwise.
"""
from __future__ import annotations

import os

from medspan.lexemb import _sgns_py

if os.environ.get("MEDSPAN_PURE_PYTHON") == "1":
    _impl = _sgns_py
    BACKEND = "python"
else:
    try:
        from medspan.lexemb import _sgns as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _sgns_py
        BACKEND = "python"

sgns_epoch = _impl.sgns_epoch


def available_backends() -> dict[str, object]:
    """Name -> sgns_epoch callable for every importable backend."""
    backends: dict[str, object] = {"python": _sgns_py.sgns_epoch}
    try:
        from medspan.lexemb import _sgns

        backends["cython"] = _sgns.sgns_epoch
    except ImportError:
        pass
    return backends
