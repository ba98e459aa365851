"""Kernel backend selection.

Set ``TITAN_BACKEND=numpy`` to force the vectorized numpy kernels, or
``TITAN_BACKEND=numba`` (the default when numba imports) for the JIT loops.
The choice is made once, at import time.
"""
import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False


def _select():
    choice = os.environ.get("TITAN_BACKEND", "").strip().lower()
    if choice in ("", "auto"):
        return "numba" if HAS_NUMBA else "numpy"
    if choice not in ("numba", "numpy"):
        raise ValueError(f"TITAN_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAS_NUMBA:
        raise ImportError("TITAN_BACKEND=numba but numba is not installed")
    return choice


BACKEND = _select()


def njit(fn):
    """Compile ``fn`` with numba when available; the plain function otherwise."""
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
