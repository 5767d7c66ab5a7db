import math

import numpy as np
import pytest

from hj_strata import kernels
from hj_strata import _sweep_py
from hj_strata.bellman import (
    DiscountedProblem,
    SLOperator,
    ergodic_continuation,
    solve_discounted,
    solve_ergodic_relative,
)
from hj_strata.grids import GridSpec
from hj_strata.scenario import load_preset
from hj_strata.cell import ball_operator, strip_operator

COS16 = math.cos(math.pi / 16)


def _torus_operator(h=0.25, delta=None, cost_fn=None):
    """Constant-coefficient operator on a unit torus: no state constraints."""
    scn = load_preset("eikonal")
    grid = GridSpec.torus(1.0, h)
    pts = grid.nodes()
    a = np.asarray(scn.controls)
    drift = np.broadcast_to(a[:, None, :], (len(a), grid.size, 2)).copy()
    if cost_fn is None:
        cost = np.ones((len(a), grid.size))
    else:
        cost = np.broadcast_to(cost_fn(pts), (len(a), grid.size)).copy()
    return SLOperator(grid, drift, cost, math.sqrt(h) if delta is None else delta)


def test_operator_shapes_and_base():
    op = _torus_operator()
    assert op.idx.shape == (17, op.grid.size, 4)
    assert op.w.shape == op.idx.shape
    assert op.base.shape == (17, op.grid.size)
    assert np.all(np.isfinite(op.base))  # torus: every control admissible
    assert np.allclose(op.w.sum(axis=-1), 1.0)


def test_state_constraints_drop_exiting_controls():
    scn = load_preset("eikonal")
    op = ball_operator(scn, 1.0)
    # at the box corner, controls pointing outward are inadmissible
    assert np.isinf(op.base).any()
    # but every node keeps at least one admissible control (zero control)
    assert np.all(np.isfinite(op.base).any(axis=0))


def test_no_admissible_control_raises():
    grid = GridSpec.box(0.5, 0.25)
    n = grid.size
    drift = np.ones((1, n, 2))  # single control always exits near the corner
    cost = np.ones((1, n))
    with pytest.raises(ValueError, match="no admissible control"):
        SLOperator(grid, drift, cost, 10.0)


def test_gamma_validation():
    op = _torus_operator()
    assert op.gamma(0.0) == 1.0
    with pytest.raises(ValueError):
        op.gamma(-1.0)
    with pytest.raises(ValueError):
        op.gamma(1.0 / op.delta + 1.0)


def test_apply_is_monotone():
    """u <= v pointwise implies T u <= T v: the scheme is monotone."""
    op = _torus_operator()
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = rng.normal(size=op.grid.size)
        v = u + rng.uniform(0.0, 1.0, size=op.grid.size)
        tu = op.apply(u, 0.5)
        tv = op.apply(v, 0.5)
        assert np.all(tu <= tv + 1e-12)


def test_apply_commutes_with_constants():
    # T(u + c) = T(u) + gamma c: used by the span certificate
    op = _torus_operator()
    rng = np.random.default_rng(1)
    u = rng.normal(size=op.grid.size)
    for disc in (0.0, 0.5, 1.0):
        g = op.gamma(disc)
        assert np.allclose(op.apply(u + 3.0, disc), op.apply(u, disc) + g * 3.0, atol=1e-12)


def test_discounted_constant_cost_oracle():
    # constant cost 1, discount alpha: the value is exactly 1/alpha everywhere
    for alpha in (1.0, 0.5, 1.5):
        op = _torus_operator()
        field, info = solve_discounted(DiscountedProblem(op, alpha), tol=1e-12)
        assert info.converged
        assert np.allclose(field.values, 1.0 / alpha, atol=1e-9)


def test_discounted_pure_jacobi_matches_accelerated():
    op = _torus_operator(cost_fn=lambda p: 1.0 + 0.5 * np.sin(2 * np.pi * p[:, 0]))
    f1, i1 = solve_discounted(DiscountedProblem(op, 1.0), tol=1e-11, use_gauss_seidel=False)
    f2, i2 = solve_discounted(DiscountedProblem(op, 1.0), tol=1e-11, use_gauss_seidel=True)
    assert np.allclose(f1.values, f2.values, atol=1e-9)
    assert i1.converged and i2.converged


def test_ergodic_relative_constant_cost():
    # flat cost: average rate is exactly 1, corrector is 0
    op = _torus_operator()
    res = solve_ergodic_relative(op, tol=1e-10)
    assert res.converged
    assert res.rate == pytest.approx(1.0, abs=1e-9)
    assert res.rate_bounds[0] <= res.rate <= res.rate_bounds[1] + 1e-15
    assert np.allclose(res.field.values, 0.0, atol=1e-8)


def test_ergodic_relative_certificate_brackets_rate():
    op = _torus_operator(cost_fn=lambda p: 1.0 + 0.4 * np.sin(2 * np.pi * p[:, 0]))
    res = solve_ergodic_relative(op, tol=1e-8)
    assert res.converged
    lo, hi = res.rate_bounds
    assert hi - lo <= 2e-8 + 1e-12
    assert lo - 1e-15 <= res.rate <= hi + 1e-15


def test_ergodic_strip_no_defect_oracle():
    """Translation-invariant strip: rate = 1 - |p1| cos(pi/16) exactly.

    The minimizing relaxed control mixes the two directions closest to e1,
    which is realizable on the grid, so the semi-Lagrangian value is exact.
    """
    scn = load_preset("eikonal")
    for p1 in (0.5, -0.5, 0.25):
        op = strip_operator(scn, p1, rho=1.0)
        res = solve_ergodic_relative(op, tol=1e-9)
        assert res.converged
        assert res.rate == pytest.approx(1.0 - abs(p1) * COS16, abs=1e-9)


def test_continuation_matches_relative_vi():
    scn = load_preset("strip_attract")
    op = strip_operator(scn, 0.3, rho=2.0)
    vi = solve_ergodic_relative(op, tol=1e-7)
    cont = ergodic_continuation(op, lambda0=0.5, factor=0.5, tol=1e-7)
    assert vi.converged and cont.converged
    assert vi.rate == pytest.approx(cont.rate, abs=2e-7)
    # the discount history decreases geometrically
    lams = [lam for lam, _ in cont.history]
    assert all(b < a for a, b in zip(lams, lams[1:]))


def test_backend_parity_jacobi():
    """Compiled and numpy backends produce identical Bellman applications."""
    rng = np.random.default_rng(7)
    op = _torus_operator(cost_fn=lambda p: 1.0 + 0.3 * np.cos(2 * np.pi * p[:, 1]))
    u = rng.normal(size=op.grid.size)
    out_sel = np.empty(op.grid.size)
    out_py = np.empty(op.grid.size)
    kernels.jacobi_min(op.idx, op.w, op.base, 0.97, u, out_sel)
    _sweep_py.jacobi_min(op.idx, op.w, op.base, 0.97, u, out_py)
    assert np.allclose(out_sel, out_py, rtol=0, atol=1e-13)


@pytest.mark.skipif(not kernels.HAS_GAUSS_SEIDEL, reason="compiled backend not built")
def test_gauss_seidel_preserves_fixed_point():
    # at the discounted fixed point, GS sweeps must not move the solution
    op = _torus_operator()
    fixed, _ = solve_discounted(DiscountedProblem(op, 1.0), tol=1e-13)
    u = fixed.flat().copy()
    op.gs_cycle(u, 1.0)
    assert np.allclose(u, fixed.flat(), atol=1e-10)


def test_best_iterate_fallback_reports_not_converged():
    op = _torus_operator(cost_fn=lambda p: 1.0 + 0.4 * np.sin(2 * np.pi * p[:, 0]))
    res = solve_ergodic_relative(op, tol=1e-13, max_iter=4)
    assert not res.converged
    assert math.isfinite(res.rate)
    assert res.rate_bounds[0] <= res.rate_bounds[1]
