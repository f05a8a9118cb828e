"""Numba switch for the hot kernels.

Every kernel module ships a numba version and a vectorised numpy version with
identical semantics.  ``SMAR_BACKEND=numpy`` (or a missing numba install)
selects the numpy path process-wide; ``set_backend`` flips it at runtime,
which the benchmarks and backend-equivalence tests rely on.
"""
import os

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_backend = os.environ.get("SMAR_BACKEND", "numba").strip().lower()
if _backend not in ("numba", "numpy"):
    raise ValueError(f"SMAR_BACKEND must be 'numba' or 'numpy', got {_backend!r}")
if not HAS_NUMBA:
    _backend = "numpy"


def njit(func):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    if HAS_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


def get_backend() -> str:
    return _backend


def set_backend(name: str) -> str:
    """Select the kernel backend; returns the previous one."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def use_numba() -> bool:
    return _backend == "numba"
