"""Backend selection for the hot kernels.

Set ``SURFALIGN_BACKEND=numpy`` (or ``SURFALIGN_DISABLE_NUMBA=1``) before import
to route batch operations through the vectorised numpy kernels instead of the
numba-compiled ones.  The choice can also be flipped at runtime with
:func:`set_backend`, which the benchmark and the parity tests use.
"""
import contextlib
import os

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False


def _env_backend():
    if os.environ.get("SURFALIGN_DISABLE_NUMBA", "") not in ("", "0"):
        return "numpy"
    name = os.environ.get("SURFALIGN_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown SURFALIGN_BACKEND {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        return "numpy"
    return name


_BACKEND = _env_backend()


def njit(*args, **kwargs):
    """``numba.njit`` with caching on; identity decorator when numba is absent."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def backend():
    return _BACKEND


def set_backend(name):
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _BACKEND = name


@contextlib.contextmanager
def using_backend(name):
    prev = _BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)
