"""Kernel backend selection.

Imports the compiled extension when available, falling back to the numpy
implementation. ``STREAMMEM_KERNELS=pure|native`` forces a backend (used by
the benchmark and the cross-backend tests).
"""

from __future__ import annotations

import os

from . import pure as _pure

_FORCE = os.environ.get("STREAMMEM_KERNELS", "").strip().lower()
if _FORCE not in ("", "pure", "native"):
    raise ImportError(f"STREAMMEM_KERNELS must be 'pure' or 'native', got {_FORCE!r}")

_impl = None
if _FORCE != "pure":
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        if _FORCE == "native":
            raise
if _impl is None:
    _impl = _pure

backend_name: str = _impl.BACKEND_NAME
grayscale_from_rgb = _impl.grayscale_from_rgb
histogram_u8 = _impl.histogram_u8
pearson = _impl.pearson


def available_backends() -> dict[str, object]:
    """Importable backend modules by name (for benchmarks and tests)."""
    found: dict[str, object] = {"pure": _pure}
    try:
        from . import _native
    except ImportError:
        pass
    else:
        found["native"] = _native
    return found
