"""Backend selection for the Bellman sweep kernels.

Prefers the compiled ``_sweep_core`` extension and falls back to the
numpy implementation when it is missing (source checkout without a build)
or when ``HJ_STRATA_PURE=1`` forces the fallback.  Both backends share the
same fixed points: Gauss-Seidel is an accelerator, and every reported
residual comes from a synchronous ``jacobi_min`` application.
"""

from __future__ import annotations

import os

if os.environ.get("HJ_STRATA_PURE", "").strip() not in ("", "0"):
    from . import _sweep_py as _impl

    BACKEND = "python"
else:
    try:
        from . import _sweep_core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        from . import _sweep_py as _impl

        BACKEND = "python"

jacobi_min = _impl.jacobi_min
gauss_seidel = getattr(_impl, "gauss_seidel", None)
HAS_GAUSS_SEIDEL = bool(_impl.HAS_GAUSS_SEIDEL)

__all__ = ["jacobi_min", "gauss_seidel", "HAS_GAUSS_SEIDEL", "BACKEND"]
