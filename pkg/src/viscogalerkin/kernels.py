"""Select the compiled kernels when available.

Set ``VISCO_PURE_PYTHON=1`` to force the numpy implementation.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("VISCO_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

viscosity = _impl.viscosity
strain_magnitude_sq = _impl.strain_magnitude_sq
stress = _impl.stress
scatter = _impl.scatter
gather = _impl.gather
# fused two-dimensional right-hand side; compiled backend only
Plan2D = getattr(_impl, "Plan2D", None)

__all__ = ["BACKEND", "viscosity", "strain_magnitude_sq", "stress", "scatter", "gather", "Plan2D"]
