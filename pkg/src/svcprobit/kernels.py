"""Backend selection for the hot kernels.

The compiled core is used when importable; otherwise the numpy fallback.
Set ``SVCPROBIT_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback
from .rng import ZIG_FI, ZIG_KI, ZIG_WI

_core = None
if os.environ.get("SVCPROBIT_BACKEND", "").lower() not in ("python", "numpy", "fallback"):
    try:
        from . import _core
    except ImportError:  # pragma: no cover - depends on the build
        _core = None

if _core is not None:
    _core.set_tables(ZIG_KI, ZIG_WI, ZIG_FI)
    backend = _core
    BACKEND = "compiled"
else:
    backend = _fallback
    BACKEND = "python"

BACKENDS = {"python": _fallback}
if _core is not None:
    BACKENDS["compiled"] = _core


def get_backend(name=None):
    """Return the kernel module ``name`` ("compiled" or "python"), default the active one."""
    if name is None:
        return backend
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None
