"""Pure-numpy Bellman sweep kernels (fallback backend).

Same contract as the compiled ``_sweep_core``: ``jacobi_min`` evaluates one
synchronous Bellman application; Gauss-Seidel sweeps are unavailable here
(``HAS_GAUSS_SEIDEL`` is False) and the solvers fall back to plain value
iteration.
"""

from __future__ import annotations

import numpy as np

HAS_GAUSS_SEIDEL = False


def jacobi_min(
    idx: np.ndarray,      # (na, N, 4) int32 corner indices
    w: np.ndarray,        # (na, N, 4) float64 corner weights
    base: np.ndarray,     # (na, N) float64 step cost (+inf marks inadmissible)
    gamma: float,
    u: np.ndarray,        # (N,) current values
    out: np.ndarray,      # (N,) output
) -> None:
    na = idx.shape[0]
    out[:] = np.inf
    for a in range(na):
        cand = base[a] + gamma * np.einsum("nk,nk->n", w[a], u[idx[a]])
        np.minimum(out, cand, out=out)


def gauss_seidel(idx, w, base, gamma, u, order) -> None:  # pragma: no cover
    raise NotImplementedError("Gauss-Seidel sweeps need the compiled backend")
