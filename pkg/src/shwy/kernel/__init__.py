"""Simulation kernel backend selection.

The compiled extension is preferred when importable; the pure-Python
reference kernel is the fallback.  ``SHWY_KERNEL=python`` or
``SHWY_KERNEL=native`` forces a backend (the latter raises if the extension
is missing).  Both backends produce bit-identical trajectories.
"""

from __future__ import annotations

import os

from . import _pyref

_FORCED = os.environ.get("SHWY_KERNEL", "").strip().lower()

if _FORCED == "python":
    _impl = _pyref
elif _FORCED in ("", "native"):
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        if _FORCED == "native":
            raise
        _impl = _pyref
else:
    raise RuntimeError(f"SHWY_KERNEL must be 'python' or 'native', got {_FORCED!r}")

BACKEND: str = _impl.BACKEND_NAME
advance = _impl.advance


def available_backends() -> dict[str, object]:
    """Importable kernels by name; used by the parity tests and benchmark."""
    backends: dict[str, object] = {"python": _pyref}
    try:
        from . import _native

        backends["native"] = _native
    except ImportError:
        pass
    return backends
