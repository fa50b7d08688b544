"""Convolution kernel backends.

Two interchangeable implementations of the 3x3 same-padding convolution
(forward pass, input gradient, parameter gradients): a compiled Cython
extension and a pure-NumPy im2col formulation. The compiled one is used
when available; set STACKDENOISE_BACKEND=numpy or =cython to force a
choice (forcing cython raises if the extension is not built).

``benchmarks/bench_kernels.py`` times the two against each other.
"""

from __future__ import annotations

import os

from . import numpy_backend


def _select():
    requested = os.environ.get("STACKDENOISE_BACKEND", "auto").lower()
    if requested not in ("auto", "cython", "numpy"):
        raise ValueError(
            f"STACKDENOISE_BACKEND={requested!r}; expected auto, cython or numpy"
        )
    if requested == "numpy":
        return numpy_backend
    try:
        from . import cython_backend

        return cython_backend
    except ImportError:
        if requested == "cython":
            raise ImportError(
                "STACKDENOISE_BACKEND=cython but the compiled extension is not "
                "built; install the package (pip install -e . --no-build-isolation) "
                "or use STACKDENOISE_BACKEND=numpy"
            ) from None
        return numpy_backend


_backend = _select()

BACKEND = _backend.NAME
conv3x3_forward = _backend.conv3x3_forward
conv3x3_backward_input = _backend.conv3x3_backward_input
conv3x3_backward_params = _backend.conv3x3_backward_params


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        from . import cython_backend  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    return names


def get_backend(name: str):
    """Return a backend module by name ("numpy" or "cython")."""
    if name == "numpy":
        return numpy_backend
    if name == "cython":
        from . import cython_backend

        return cython_backend
    raise ValueError(f"unknown backend {name!r}; expected numpy or cython")
