"""Hot numeric kernels with a compiled core and a pure-Python fallback.

The compiled backend is selected at import when available; set the
``FABMATCH_PURE_PYTHON`` environment variable to force the numpy fallback.
Both backends expose the same five functions with identical semantics
(see ``py_backend`` for the reference definitions).
"""
import os

if os.environ.get("FABMATCH_PURE_PYTHON"):
    from . import py_backend as _impl
else:
    try:
        from . import cy_backend as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import py_backend as _impl

BACKEND = _impl.NAME

affine_forward = _impl.affine_forward
relu_forward = _impl.relu_forward
relu_backward = _impl.relu_backward
affine_backward = _impl.affine_backward
adam_update = _impl.adam_update


def use_backend(name: str) -> None:
    """Rebind the kernel functions to a named backend ('python' or 'cython').

    Intended for benchmarking and tests; normal code relies on the
    import-time selection.
    """
    global _impl, BACKEND, affine_forward, relu_forward, relu_backward
    global affine_backward, adam_update
    if name == "python":
        from . import py_backend as impl
    elif name == "cython":
        from . import cy_backend as impl  # type: ignore[attr-defined]
    else:
        raise ValueError(f"unknown backend {name!r}")
    _impl = impl
    BACKEND = impl.NAME
    affine_forward = impl.affine_forward
    relu_forward = impl.relu_forward
    relu_backward = impl.relu_backward
    affine_backward = impl.affine_backward
    adam_update = impl.adam_update


__all__ = [
    "BACKEND",
    "use_backend",
    "affine_forward",
    "relu_forward",
    "relu_backward",
    "affine_backward",
    "adam_update",
]
