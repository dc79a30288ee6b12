"""Kernel backend selection.

The compiled extension is used when importable; setting ``PHYDEFORMER_PURE=1``
forces the pure-Python implementation.
"""
import os

from . import _kernels_py

BACKEND = "python"
closest_points = _kernels_py.closest_points

if os.environ.get("PHYDEFORMER_PURE") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        closest_points = _compiled.closest_points
        BACKEND = "compiled"


def get_backend(name: str | None = None):
    """Return the ``closest_points`` implementation for ``name`` ('compiled' or 'python')."""
    if name is None:
        return closest_points
    if name == "python":
        return _kernels_py.closest_points
    if name == "compiled":
        from . import _kernels

        return _kernels.closest_points
    raise ValueError(f"unknown kernel backend {name!r}")
