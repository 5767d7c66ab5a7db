"""Semi-Lagrangian Bellman operator and its fixed-point solvers.

One application of the operator at a node is

    T[u](y) = min_a { delta * l(y, a) + (1 - discount*delta) * u(y + delta f(y, a)) }

with bilinear interpolation of ``u`` at the foot point.  On state-constrained
axes a control is admissible only when its foot stays inside the grid, and a
node with no admissible control is a construction error.  The interpolation
stencils, weights, and step costs are precomputed once per operator, so a
sweep is a pure gather/fma kernel (see :mod:`hj_strata.kernels`).

Three solvers share the operator:

* :func:`solve_discounted` — contraction iteration for ``discount > 0``.
* :func:`solve_ergodic_relative` — relative value iteration at zero discount;
  the returned ``rate`` is the optimal long-run average cost, certified by the
  span of ``T0[u] - u`` (the true rate always lies between the extreme nodal
  growth rates).
* :func:`ergodic_continuation` — small-discount limit ``discount -> 0`` with
  warm starts and Richardson extrapolation of the anchor value; an independent
  route to the same average cost, used as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grids import GridSpec, ValueField

__all__ = [
    "SLOperator",
    "DiscountedProblem",
    "SolveInfo",
    "ErgodicRelativeResult",
    "ContinuationResult",
    "apply_bellman",
    "solve_discounted",
    "solve_ergodic_relative",
    "ergodic_continuation",
]


class SLOperator:
    """Precomputed Bellman operator (optionally restricted to ``rows``).

    ``drift`` has shape (n_controls, n_rows, 2) and ``cost`` (n_controls,
    n_rows) where ``rows`` defaults to every node of the grid in flat order.
    """

    def __init__(
        self,
        grid: GridSpec,
        drift: np.ndarray,
        cost: np.ndarray,
        delta: float,
        *,
        rows: np.ndarray | None = None,
    ):
        if delta <= 0:
            raise ValueError("time step delta must be positive")
        self.grid = grid
        self.delta = float(delta)
        self.rows = np.arange(grid.size, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
        self.full = rows is None
        nodes = grid.nodes()[self.rows]
        drift = np.asarray(drift, dtype=float)
        cost = np.asarray(cost, dtype=float)
        na = drift.shape[0]
        if drift.shape != (na, len(self.rows), 2) or cost.shape != (na, len(self.rows)):
            raise ValueError("drift/cost shapes do not match the operator rows")
        feet = nodes[None, :, :] + self.delta * drift
        flat_feet = feet.reshape(-1, 2)
        admissible = grid.contains(flat_feet, tol=1e-9 * self.delta).reshape(na, len(self.rows))
        idx, w = grid.interp_weights(flat_feet, clip=True)
        self.idx = np.ascontiguousarray(idx.reshape(na, len(self.rows), 4), dtype=np.int32)
        self.w = np.ascontiguousarray(w.reshape(na, len(self.rows), 4))
        self.base = np.ascontiguousarray(self.delta * cost)
        bad = ~admissible
        if bad.any():
            self.base[bad] = np.inf
            self.w[bad] = 0.0
            self.idx[bad] = 0
        no_control = ~admissible.any(axis=0)
        if no_control.any():
            k = int(np.argmax(no_control))
            y = nodes[k]
            raise ValueError(
                f"node at ({y[0]:.6g}, {y[1]:.6g}) has no admissible control for "
                f"delta={self.delta:.6g}; shrink the step or enlarge the domain"
            )
        self._orders: list[np.ndarray] | None = None

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def gamma(self, discount: float) -> float:
        g = 1.0 - discount * self.delta
        if not (0.0 < g <= 1.0):
            raise ValueError(f"discount*delta = {discount * self.delta:.6g} must lie in [0, 1)")
        return g

    def apply(self, u: np.ndarray, discount: float, out: np.ndarray | None = None) -> np.ndarray:
        """One synchronous Bellman application; returns values on ``rows``."""
        if out is None:
            out = np.empty(self.n_rows)
        kernels.jacobi_min(self.idx, self.w, self.base, self.gamma(discount), u, out)
        return out

    def sweep_orders(self) -> list[np.ndarray]:
        """Four alternating node orderings for Gauss-Seidel sweeps."""
        if self._orders is None:
            n1, n2 = self.grid.n1, self.grid.n2
            i = np.arange(n1)
            j = np.arange(n2)
            self._orders = [
                np.ascontiguousarray(o.ravel(), dtype=np.int32)
                for o in (
                    np.add.outer(i * n2, j),
                    np.add.outer(i[::-1] * n2, j[::-1]),
                    np.add.outer(i * n2, j[::-1]),
                    np.add.outer(i[::-1] * n2, j),
                )
            ]
        return self._orders

    def gs_cycle(self, u: np.ndarray, discount: float) -> None:
        """Four in-place Gauss-Seidel sweeps (compiled backend only)."""
        g = self.gamma(discount)
        for order in self.sweep_orders():
            kernels.gauss_seidel(self.idx, self.w, self.base, g, u, order)


@dataclass(frozen=True, slots=True)
class DiscountedProblem:
    """An operator paired with a positive discount, ``discount*delta < 1``."""

    operator: SLOperator
    discount: float

    def __post_init__(self):
        if self.discount <= 0:
            raise ValueError("discounted problems need discount > 0")
        self.operator.gamma(self.discount)  # validates the range


@dataclass(frozen=True, slots=True)
class SolveInfo:
    iterations: int
    residual: float
    converged: bool
    backend: str = kernels.BACKEND
    gauss_seidel: bool = False


def apply_bellman(operator: SLOperator, u: np.ndarray, discount: float) -> np.ndarray:
    """One monotone Bellman application (synchronous, on the operator rows)."""
    return operator.apply(np.asarray(u, dtype=float).reshape(-1), discount)


def solve_discounted(
    problem: DiscountedProblem,
    *,
    tol: float = 1e-9,
    max_iter: int = 200_000,
    u0: np.ndarray | None = None,
    use_gauss_seidel: bool = True,
) -> tuple[ValueField, SolveInfo]:
    """Fixed point of the discounted operator to residual ``tol`` (sup norm).

    Returns the best iterate with ``converged=False`` when ``max_iter`` is
    exhausted.  The reported residual always comes from a synchronous
    application, so it is backend-independent.
    """
    op = problem.operator
    if not op.full:
        raise ValueError("solve_discounted needs a full-grid operator")
    u = np.zeros(op.grid.size) if u0 is None else np.array(u0, dtype=float).reshape(-1).copy()
    gs = use_gauss_seidel and kernels.HAS_GAUSS_SEIDEL
    residual = math.inf
    it = 0
    while it < max_iter:
        if gs:
            op.gs_cycle(u, problem.discount)
            it += 4
        tu = op.apply(u, problem.discount)
        it += 1
        residual = float(np.max(np.abs(tu - u)))
        u = tu
        if residual <= tol:
            return (
                ValueField(op.grid, u.reshape(op.grid.n1, op.grid.n2)),
                SolveInfo(it, residual, True, gauss_seidel=gs),
            )
    return (
        ValueField(op.grid, u.reshape(op.grid.n1, op.grid.n2)),
        SolveInfo(it, residual, False, gauss_seidel=gs),
    )


@dataclass(frozen=True, slots=True)
class ErgodicRelativeResult:
    field: ValueField          # relative values, 0 at the anchor node
    rate: float                # optimal long-run average cost
    residual: float            # certified half-span of T0[u] - u
    rate_bounds: tuple[float, float]
    iterations: int
    converged: bool
    span_history: tuple[float, ...] = field(repr=False, default=())


def solve_ergodic_relative(
    operator: SLOperator,
    *,
    tol: float = 1e-6,
    max_iter: int = 500_000,
) -> ErgodicRelativeResult:
    """Relative value iteration for the zero-discount (ergodic) problem.

    ``tol`` bounds the error of the returned average-cost ``rate``: iteration
    stops once ``span(T0[u] - u) / (2 delta) <= tol``, and the true rate lies
    inside ``rate_bounds`` by the monotone growth estimate.  The relative
    field is normalized to 0 at the grid anchor.  On stall (periodic optimal
    policies) the update switches to damped averaging, which restores
    convergence at half speed; non-convergence within ``max_iter`` returns the
    flagged best iterate with its span history.

    Synchronous applications only: at zero discount the operator has no
    fixed point (values grow by rate*delta per application), and in-place
    sweeps smear that growth across the sweep order, poisoning the span.
    Gauss-Seidel acceleration is reserved for the discounted solves.
    """
    op = operator
    if not op.full:
        raise ValueError("solve_ergodic_relative needs a full-grid operator")
    anchor = op.grid.anchor_index()
    u = np.zeros(op.grid.size)
    spans: list[float] = []
    damped = False
    it = 0
    best: tuple[float, float, np.ndarray, tuple[float, float]] | None = None
    while it < max_iter:
        tu = op.apply(u, 0.0)
        it += 1
        d = tu - u
        dmax = float(np.max(d))
        dmin = float(np.min(d))
        span = dmax - dmin
        rate = 0.5 * (dmax + dmin) / op.delta
        bounds = (dmin / op.delta, dmax / op.delta)
        spans.append(span)
        if best is None or span < best[0]:
            best = (span, rate, u - u[anchor], bounds)
        if span <= 2.0 * tol * op.delta:
            rel = u - u[anchor]
            return ErgodicRelativeResult(
                ValueField(op.grid, rel.reshape(op.grid.n1, op.grid.n2)),
                rate,
                span / 2.0,
                bounds,
                it,
                True,
                tuple(spans[-50:]),
            )
        if damped:
            u = 0.5 * (u + tu)
        else:
            u = tu
        u -= u[anchor]
        if not damped and len(spans) > 300 and span > 0.98 * spans[-200]:
            damped = True
    span, rate, rel, bounds = best
    return ErgodicRelativeResult(
        ValueField(op.grid, rel.reshape(op.grid.n1, op.grid.n2)),
        rate,
        span / 2.0,
        bounds,
        it,
        False,
        tuple(spans[-50:]),
    )


@dataclass(frozen=True, slots=True)
class ContinuationResult:
    rate: float                               # extrapolated average cost
    history: tuple[tuple[float, float], ...]  # (discount, anchor value) pairs
    field: ValueField                         # last discounted solution
    converged: bool
    stages: int


def ergodic_continuation(
    operator: SLOperator,
    *,
    lambda0: float,
    factor: float,
    tol: float,
    max_stages: int = 60,
    lambda_floor: float = 1e-7,
    max_iter: int = 400_000,
) -> ContinuationResult:
    """Vanishing-discount estimate of the average cost.

    Runs discounted solves along ``lambda0 * factor**k`` with warm starts
    (shifting by the estimated rate times the change of ``1/lambda``), records
    ``(lambda, anchor value)`` pairs, and Richardson-extrapolates
    ``lambda * anchor`` to ``lambda = 0``; stops when two successive
    extrapolations agree within ``0.5 * tol``.  Inner solves run to residual
    ``0.1 * tol * delta`` so their contribution to the rate error stays below
    ``0.1 * tol``.
    """
    op = operator
    anchor = op.grid.anchor_index()
    inner_tol = 0.1 * tol * op.delta
    lam = lambda0
    u: np.ndarray | None = None
    history: list[tuple[float, float]] = []
    extrapolations: list[float] = []
    rates: list[float] = []
    converged = False
    stage = 0
    fieldv: ValueField | None = None
    while stage < max_stages and lam >= lambda_floor:
        fieldv, info = solve_discounted(
            DiscountedProblem(op, lam), tol=inner_tol, max_iter=max_iter, u0=u
        )
        u = fieldv.flat().copy()
        a_val = float(u[anchor])
        history.append((lam, a_val))
        rates.append(lam * a_val)
        if len(history) >= 2:
            (l_prev, a_prev) = history[-2]
            c_prev = l_prev * a_prev
            c_curr = rates[-1]
            extrapolations.append((l_prev * c_curr - lam * c_prev) / (l_prev - lam))
            if len(extrapolations) >= 2 and abs(extrapolations[-1] - extrapolations[-2]) <= 0.5 * tol:
                converged = info.converged
                stage += 1
                break
        next_lam = lam * factor
        c_est = extrapolations[-1] if extrapolations else rates[-1]
        u = u + c_est * (1.0 / next_lam - 1.0 / lam)
        lam = next_lam
        stage += 1
    rate = extrapolations[-1] if extrapolations else (rates[-1] if rates else math.nan)
    assert fieldv is not None
    return ContinuationResult(rate, tuple(history), fieldv, converged, stage)
