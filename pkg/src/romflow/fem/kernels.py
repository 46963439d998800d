"""Element-kernel backend selection.

The compiled extension is preferred when importable; otherwise the numpy
implementation is used.  Setting ``ROMFLOW_PURE_PYTHON=1`` forces the
numpy backend.  Both expose the same functions and agree to rounding,
so the choice never changes results beyond the last bits.
"""

from __future__ import annotations

import importlib
import os

if os.environ.get("ROMFLOW_PURE_PYTHON", "") not in ("", "0"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl


def get_backend() -> str:
    return _impl.backend_name


def get_impl(name: str):
    """Fetch a specific backend module ("python" or "compiled")."""
    if name == "python":
        return importlib.import_module("romflow.fem._kernels_py")
    if name == "compiled":
        return importlib.import_module("romflow.fem._kernels")
    raise ValueError(f"unknown backend {name!r}")


element_residuals = _impl.element_residuals
element_jacobians = _impl.element_jacobians
assemble_residual = _impl.assemble_residual
