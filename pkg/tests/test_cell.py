import json
import math

import numpy as np
import pytest

from hj_strata.cell import (
    EffectiveTables,
    TableRangeError,
    background_min_over_q,
    ball_ergodic,
    dirichlet_datum,
    slopes,
    strip_ergodic,
    tabulate_effective,
    tangential_hamiltonian,
    torus_effective,
    verify_corrector_slopes,
)
from hj_strata.scenario import load_preset

COS16 = math.cos(math.pi / 16)


def test_strip_no_defect_lambda_is_exact():
    """lambda(p1) = -(1 - |p1| cos(pi/16)) on the translation-invariant strip."""
    scn = load_preset("eikonal")
    for p1 in (0.0, 0.5, -0.75):
        est = strip_ergodic(scn, p1, rho=1.0, tol=1e-9)
        assert est.converged
        assert est.constant == pytest.approx(-(1.0 - abs(p1) * COS16), abs=1e-8)
        assert est.method_gap <= 2e-9


def test_strip_constant_monotone_in_truncation():
    # enlarging the strip can only help the optimizer: lambda_rho nondecreasing
    scn = load_preset("strip_attract")
    consts = [strip_ergodic(scn, 0.25, rho=r, tol=1e-6).constant for r in (1.0, 2.0, 4.0)]
    for a, b in zip(consts, consts[1:]):
        assert b >= a - 1e-6


def test_tangential_attractive_strip_oracle():
    # the dip floor 0.5 is reachable and sittable: H1T(0) = -0.5
    scn = load_preset("strip_attract")
    res = tangential_hamiltonian(scn, 0.0, tol=1e-6)
    assert res.converged
    assert res.value == pytest.approx(-0.5, abs=1e-5)


def test_ball_flat_bottom_oracle():
    # cost_bump: flat-bottom node with cost 0.5, zero control admissible
    scn = load_preset("cost_bump")
    est = ball_ergodic(scn, 1.0, tol=1e-7)
    assert est.converged
    assert est.constant == pytest.approx(-0.5, abs=1e-6)


def test_ball_repulsive_core_oracle():
    # core_repulse: cheapest reachable cost is the background 1 => E = -1
    scn = load_preset("core_repulse")
    est = ball_ergodic(scn, 1.0, tol=1e-7)
    assert est.converged
    assert est.constant == pytest.approx(-1.0, abs=1e-6)


def test_dirichlet_datum_walks_truncations():
    scn = load_preset("cost_bump")
    res = dirichlet_datum(scn, R_list=(1.0, 2.0), tol=1e-6)
    assert res.converged
    assert res.E == pytest.approx(-0.5, abs=1e-5)
    assert len(res.estimates) == 2
    assert res.corrector.anchor_value() == 0.0


def test_torus_effective_checkerboard_oracle():
    # cost 1 + 0.4 sin(2pi y1) sin(2pi y2) has a sittable grid minimum of 0.6
    scn = load_preset("checkerboard")
    est = torus_effective(scn, (0.0, 0.0), tol=1e-7)
    assert est.converged
    assert est.constant == pytest.approx(-0.6, abs=1e-6)


def test_background_min_over_q():
    scn = load_preset("eikonal")
    # background H(p1, q) = |p| cos(pi/16) - 1 up to the direction quantization;
    # minimum over q sits at q = 0
    v0 = background_min_over_q(scn, 0.0)
    assert v0 == pytest.approx(-1.0, abs=1e-9)
    v1 = background_min_over_q(scn, 0.5)
    assert v1 == pytest.approx(eval_h_eik(0.5, 0.0), abs=1e-6)


def eval_h_eik(p1, q):
    from hj_strata.hamiltonian import eval_H

    scn = load_preset("eikonal")
    return eval_H(scn, np.zeros(2), np.array([2.0, 2.0]), np.array([p1, q])).value


def test_slopes_symmetric_window():
    scn = load_preset("strip_attract")
    lo, hi = slopes(scn, 0.0, -0.5)
    assert hi == pytest.approx(0.5 / COS16, abs=1e-3)
    assert lo == pytest.approx(-hi, abs=1e-9)
    # a level below the background floor has no slope window
    with pytest.raises(ValueError):
        slopes(scn, 0.0, -1.5)


def test_verify_corrector_slopes_attractive():
    scn = load_preset("strip_attract")
    est = strip_ergodic(scn, 0.0, rho=4.0, tol=1e-7)
    check = verify_corrector_slopes(scn, est, level=-0.5)
    assert check.passed, check.detail


def test_effective_tables_small_batch():
    scn = load_preset("strip_attract")
    tab = tabulate_effective(scn, tol=1e-5, threads=2, p1_grid=[-0.5, 0.0, 0.5])
    assert tab.flags == {}
    assert tab.branches() == ["main"]
    # symmetric scenario: even table
    assert tab.h1t["main"][0] == pytest.approx(tab.h1t["main"][2], abs=1e-4)
    assert tab.h1t_at(0.0) == pytest.approx(-0.5, abs=1e-4)
    lo, hi = tab.slopes_at(0.0)
    assert lo < 0 < hi
    assert tab.E == pytest.approx(-0.5, abs=1e-4)
    assert tab.midpoint_convexity_violation() <= 1e-4
    with pytest.raises(TableRangeError):
        tab.h1t_at(99.0)
    with pytest.raises(TableRangeError):
        tab.slopes_at(-99.0)


def test_effective_tables_json_round_trip():
    scn = load_preset("strip_attract")
    tab = tabulate_effective(scn, tol=3e-5, threads=2, p1_grid=[-0.4, 0.0, 0.4])
    blob = json.dumps(tab.to_json_dict())
    back = EffectiveTables.from_json_dict(json.loads(blob))
    assert np.array_equal(back.p1_grid, tab.p1_grid)
    assert np.array_equal(back.h1t["main"], tab.h1t["main"])
    assert back.E == tab.E
    assert back.provenance["scenario_hash"] == tab.provenance["scenario_hash"]


def test_effective_tables_csv(tmp_path):
    scn = load_preset("strip_attract")
    tab = tabulate_effective(scn, tol=3e-5, p1_grid=[0.0])
    p = tmp_path / "tables.csv"
    tab.to_csv(p)
    text = p.read_text()
    assert text.startswith("# hj-strata effective tables")
    assert "block,branch,p1,value,pi_lower,pi_upper" in text
    assert "h1t,main," in text


def test_case3_tables_have_two_branches():
    scn = load_preset("case3_mirror")
    tab = tabulate_effective(scn, tol=1e-4, threads=2, p1_grid=[0.0])
    assert tab.branches() == ["minus", "plus"]
    # mirror-symmetric preset: the two branch tables coincide
    assert tab.h1t["plus"][0] == pytest.approx(tab.h1t["minus"][0], abs=1e-6)
