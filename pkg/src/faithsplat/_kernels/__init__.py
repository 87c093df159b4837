"""Blending kernel backends.

The compiled extension is preferred when importable; otherwise the NumPy
fallback is selected. FAITHSPLAT_KERNEL=python|cython forces a backend
(forcing cython raises if the extension is missing).
"""

import os

from ..errors import ConfigError

_forced = os.environ.get("FAITHSPLAT_KERNEL", "").strip().lower()

if _forced == "python":
    from . import _splat_py as _impl
    BACKEND = "python"
elif _forced in ("", "cython"):
    try:
        from . import _splat_cy as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        from . import _splat_py as _impl
        BACKEND = "python"
else:
    raise ConfigError(f"unknown FAITHSPLAT_KERNEL value {_forced!r}")

forward = _impl.forward
scalar_forward = _impl.scalar_forward
backward = _impl.backward
gradsq = _impl.gradsq

SIGMA_CUT = _impl.SIGMA_CUT
T_EPS = _impl.T_EPS


def available_backends() -> dict:
    """Importable backend modules keyed by name (for parity tests and the
    benchmark)."""
    from . import _splat_py

    found = {"python": _splat_py}
    try:
        from . import _splat_cy  # type: ignore[attr-defined]

        found["cython"] = _splat_cy
    except ImportError:
        pass
    return found
