"""Backend selection for the hot convolution kernels.

Two interchangeable implementations exist: numba-jitted loops
(kernels_numba) and a pure-numpy im2col path (kernels_numpy).  The active
one is chosen by the BLOCKMARK_BACKEND environment variable ("numba" or
"numpy"), falling back to numba when it imports cleanly.  Both produce
the same values up to floating-point associativity; a fixed backend is
bit-deterministic run to run.
"""

import os

from . import kernels_numpy

_ENV_VAR = "BLOCKMARK_BACKEND"
_VALID = ("numba", "numpy")

try:
    from . import kernels_numba

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    kernels_numba = None
    _HAS_NUMBA = False

_forced = None


def available_backends():
    return ("numba", "numpy") if _HAS_NUMBA else ("numpy",)


def active_backend() -> str:
    if _forced is not None:
        return _forced
    env = os.environ.get(_ENV_VAR, "").strip().lower()
    if env:
        if env not in _VALID:
            raise ValueError(
                f"{_ENV_VAR}={env!r}: expected one of {_VALID}"
            )
        if env == "numba" and not _HAS_NUMBA:
            raise RuntimeError(f"{_ENV_VAR}=numba but numba is not importable")
        return env
    return "numba" if _HAS_NUMBA else "numpy"


def set_backend(name):
    """Force a backend programmatically (None restores env/default choice)."""
    global _forced
    if name is not None:
        if name not in _VALID:
            raise ValueError(f"unknown backend {name!r}: expected one of {_VALID}")
        if name == "numba" and not _HAS_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
    _forced = name


def kernels():
    """Return the module implementing the conv kernel trio."""
    if active_backend() == "numba":
        return kernels_numba
    return kernels_numpy


def conv3x3_forward(x, w, b):
    return kernels().conv3x3_forward(x, w, b)


def conv3x3_input_grad(dy, w):
    return kernels().conv3x3_input_grad(dy, w)


def conv3x3_weight_grad(x, dy):
    return kernels().conv3x3_weight_grad(x, dy)
