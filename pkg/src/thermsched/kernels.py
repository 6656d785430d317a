"""Backend selection for the hot thermal loop.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported. ``THERMSCHED_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _thermal_py

BACKEND = "python"
advance = _thermal_py.advance

if os.environ.get("THERMSCHED_BACKEND", "").lower() != "python":
    try:
        from . import _thermal_core
    except ImportError:  # extension not built
        pass
    else:
        advance = _thermal_core.advance
        BACKEND = "compiled"


def get_advance(backend: str):
    if backend == "python":
        return _thermal_py.advance
    if backend == "compiled":
        from . import _thermal_core

        return _thermal_core.advance
    raise ValueError(f"unknown backend {backend!r}")
