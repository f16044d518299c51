"""Backend selection for the subproblem kernels.

The compiled extension is used when it imports; otherwise the NumPy fallback.
Set ``PLAPSCHWARZ_BACKEND=python`` to force the fallback or ``compiled`` to
make a missing extension an error.
"""

import os

from . import _kernels_py

__all__ = ["BACKEND", "objective", "fista", "get_backend", "backend_name", "available_backends"]

_requested = os.environ.get("PLAPSCHWARZ_BACKEND", "").strip().lower()

try:
    from . import _kernels as _compiled
except ImportError:
    if _requested == "compiled":
        raise
    _compiled = None

if _compiled is not None and _requested != "python":
    _impl = _compiled
    BACKEND = "compiled"
else:
    _impl = _kernels_py
    BACKEND = "python"

objective = _impl.objective
fista = _impl.fista


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def get_backend(name=None):
    """Kernel module by name (``None`` means the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def backend_name(name=None):
    """``"compiled"`` or ``"python"`` for the backend ``get_backend(name)`` returns."""
    return "python" if get_backend(name) is _kernels_py else "compiled"
