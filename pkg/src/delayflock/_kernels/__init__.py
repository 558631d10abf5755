"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the NumPy fallback.
Set ``DELAYFLOCK_BACKEND=python`` to force the fallback (``compiled`` makes a
missing extension an import error instead of a silent fallback).
"""
import os

from . import _pykernels as python_backend

_choice = os.environ.get("DELAYFLOCK_BACKEND", "auto").lower()

compiled_backend = None
if _choice != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:
        if _choice == "compiled":
            raise

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND_NAME = "compiled" if backend is compiled_backend else "python"

EULER = python_backend.EULER
RK4 = python_backend.RK4


def get_backend(name=None):
    """Return a kernel module by name (``"compiled"``, ``"python"``) or the active one."""
    if name is None:
        return backend
    if name == "python":
        return python_backend
    if name == "compiled":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
        return compiled_backend
    raise ValueError(f"unknown backend {name!r}")
