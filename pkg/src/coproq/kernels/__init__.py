"""Kernel backend selection.

Two interchangeable backends implement the dueling-net hot path (forward,
backward, Adam): a compiled Cython extension and a pure-numpy twin. Import
prefers the compiled one; COPROQ_BACKEND=numpy|cython forces a choice
(forcing cython when the extension is missing is an error, not a fallback).
"""

import os

from ..exceptions import ConfigurationError
from . import numpy_ref
from .layout import DuelingLayout

try:
    from . import _cyops
except ImportError:
    _cyops = None


def get_backend(name: str):
    if name == "numpy":
        return numpy_ref
    if name == "cython":
        if _cyops is None:
            raise ConfigurationError("compiled kernel backend is not built")
        return _cyops
    raise ConfigurationError(f"unknown backend {name!r}")


def available_backends():
    return ["numpy"] + (["cython"] if _cyops is not None else [])


_forced = os.environ.get("COPROQ_BACKEND")
if _forced:
    _impl = get_backend(_forced)
else:
    _impl = _cyops if _cyops is not None else numpy_ref

BACKEND = _impl.NAME
q_forward = _impl.q_forward
q_forward_cached = _impl.q_forward_cached
q_backward = _impl.q_backward
adam_update = _impl.adam_update

__all__ = [
    "BACKEND",
    "DuelingLayout",
    "adam_update",
    "available_backends",
    "get_backend",
    "q_backward",
    "q_forward",
    "q_forward_cached",
]
