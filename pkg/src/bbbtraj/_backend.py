"""Kernel backend selection: compiled extension when importable, numpy otherwise."""
from __future__ import annotations

from . import _pykernels as python_kernels

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "compiled" if compiled_kernels is not None else "python"


def available() -> tuple:
    return ("compiled", "python") if compiled_kernels is not None else ("python",)


def get(name: str | None = None):
    """Kernel module by name; None selects the default chosen at import."""
    if name is None:
        return kernels
    if name == "python":
        return python_kernels
    if name == "compiled":
        if compiled_kernels is None:
            raise ImportError("compiled kernels are not built; reinstall with Cython available")
        return compiled_kernels
    raise ValueError(f"unknown backend {name!r}")


def name_of(module) -> str:
    return "compiled" if module is compiled_kernels else "python"
