import math

import numpy as np
import pytest

from hj_strata.cell import tabulate_effective
from hj_strata.correctors import (
    BracketError,
    Piece,
    RegimeError,
    SubcorrectorSpec,
    bellman_certificate,
    build_corrector_set,
    build_subcorrector,
    check_min_subsolution,
    majorant_gap,
    residual_field,
    select_regime,
    subsolution_residual,
)
from hj_strata.grids import GridSpec, ValueField
from hj_strata.hamiltonian import eval_fields
from hj_strata.scenario import load_preset, parse_scenario

COS16 = math.cos(math.pi / 16)

# The residual bar used throughout: one percent of the cost bound, the same
# scale the full-suite checks certify against.
TOL_CORR = 1e-2


@pytest.fixture(scope="module")
def attract():
    scn = load_preset("strip_attract")
    tables = tabulate_effective(scn, tol=5e-4)
    correctors = build_corrector_set(scn, h=1 / 32, tol=5e-4)
    return scn, tables, correctors


@pytest.fixture(scope="module")
def mirror():
    scn = load_preset("case3_mirror")
    tables = tabulate_effective(scn, tol=5e-4)
    correctors = build_corrector_set(scn, h=1 / 32, tol=5e-4)
    return scn, tables, correctors


def _certify(scn, spec, correctors, h=1 / 32):
    grid = GridSpec.box(min(4 * scn.R1, correctors.half_width), h)
    residual = subsolution_residual(scn, spec, spec.level, grid)
    gap = majorant_gap(spec, grid)
    cert = bellman_certificate(scn, spec, spec.level, grid, delta=correctors.delta)
    return residual, gap, cert


def test_select_regime_orders_levels(attract):
    scn, tables, _ = attract
    assert select_regime(scn, tables, (0.0, 0.8)) == "plane"
    assert select_regime(scn, tables, (0.3, 0.0)) == "line"
    assert select_regime(scn, tables, (1.2, 0.4)) == "line"
    # E ties min H1T exactly on this scenario; the tie goes to the origin
    # construction, which certifies the lifted level.
    assert select_regime(scn, tables, (0.0, 0.0)) == "origin"


def test_plane_regime_certifies(attract):
    scn, tables, correctors = attract
    p = (0.0, 0.8)
    spec = build_subcorrector(scn, tables, correctors, p, "plane")
    # level = H(0,p) of the eikonal-cone background, root on the right flank
    level = 0.8 * COS16 - 1.0
    assert spec.level == pytest.approx(level, abs=1e-6)
    assert spec.q_values["q1"] == pytest.approx((0.5 + level) / COS16, abs=2e-3)
    residual, gap, cert = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9
    assert cert <= TOL_CORR


def test_plane_regime_small_momentum_shallow_wells():
    # Mildly attractive wells leave the ambient level on top already at
    # p = (0, 0.2); the tangential table is a shifted cone, so the branch
    # momentum has the closed form q1 = (floor + level)/cos(pi/16) > 0.
    scn = parse_scenario(
        {
            "case": "case1",
            "alpha": 1.0,
            "R0": 0.5,
            "controls": {"directions": 16, "speed": 1.0, "include_zero": True},
            "background": {"drift": ["{a1}", "{a2}"], "cost": "1"},
            "strip_defect": {
                "drift": ["{a1}", "{a2}"],
                "cost": "1 - 0.15*smoothstep(0.5, 0.25, abs(y2))",
            },
            "core_defect": {
                "drift": ["{a1}", "{a2}"],
                "cost": "1 - 0.15*smoothstep(0.5, 0.25, abs(y2))"
                        " - 0.03*smoothstep(0.35, 0.1, sqrt(y1^2 + y2^2))",
            },
        },
        label="shallow_wells",
    )
    tables = tabulate_effective(scn, tol=5e-4)
    correctors = build_corrector_set(scn, h=1 / 32, tol=5e-4)
    p = (0.0, 0.2)
    level = 0.2 * COS16 - 1.0
    assert select_regime(scn, tables, p) == "plane"
    spec = build_subcorrector(scn, tables, correctors, p, "plane")
    assert spec.level == pytest.approx(level, abs=1e-6)
    assert spec.q_values["q1"] == pytest.approx((0.85 + level) / COS16, abs=2e-3)
    assert spec.q_values["q1"] > 0.0
    residual, gap, cert = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9
    assert cert <= TOL_CORR


def test_line_regime_far_root(attract):
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (-0.4, 0.0), "line")
    assert spec.level == pytest.approx(-(0.5 - 0.4 * COS16), abs=2e-3)
    # the opposite flank of the cone crosses the level at the mirrored momentum
    assert spec.q_values["p_tilde"] == pytest.approx(0.4, abs=2e-3)
    residual, gap, _ = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9


def test_line_regime_escape_plane(attract):
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (0.3, 0.0), "line")
    assert spec.q_values["p_tilde"] == pytest.approx(-0.3, abs=2e-3)
    assert "pi_upper" in spec.q_values
    residual, gap, cert = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9
    assert cert <= TOL_CORR


def test_origin_regime_brackets_target(attract):
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (0.0, 0.0), "origin")
    # default lift is five percent of the cost bound
    assert spec.eta == pytest.approx(0.05)
    assert spec.level == pytest.approx(tables.E + 0.05, abs=1e-9)
    # vertical roots of the eikonal cone at the lifted level
    q2 = (1.0 + spec.level) / COS16
    assert spec.q_values["q2_upper"] == pytest.approx(q2, abs=2e-3)
    assert spec.q_values["q2_lower"] == pytest.approx(-q2, abs=2e-3)
    assert spec.q_values["q2_lower"] < 0.0 < spec.q_values["q2_upper"]
    residual, gap, cert = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9
    assert cert <= TOL_CORR


def test_origin_lift_sweeps_downward(attract):
    # eta -> 0 walks the certified level down to the origin datum while the
    # construction keeps certifying.
    scn, tables, correctors = attract
    levels = []
    for eta in (0.05, 0.02, 0.008):
        spec = build_subcorrector(scn, tables, correctors, (0.0, 0.0), "origin", eta=eta)
        residual, gap, _ = _certify(scn, spec, correctors)
        assert residual <= TOL_CORR
        assert gap <= 1e-9
        levels.append(spec.level)
    assert all(b < a for a, b in zip(levels, levels[1:]))
    assert levels[-1] - tables.E == pytest.approx(0.008, abs=1e-9)


def test_active_pieces_follow_the_region_split(attract):
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (0.0, 0.0), "origin")
    grid = GridSpec.box(2.0, 1 / 32)
    pts = grid.nodes()
    labels = np.array([piece.label for piece in spec.pieces])[spec.active(pts)]
    # the ball corrector owns a neighbourhood of the origin
    near = np.linalg.norm(pts, axis=1) <= 0.2
    assert set(labels[near]) == {"origin"}
    # the affine brackets own the far field above and below the band
    far_up = pts[:, 1] >= 1.8
    assert set(labels[far_up]) <= {"bracket-upper", "bracket-lower"}
    # the band piece appears along the strip, away from the core
    on_strip = (np.abs(pts[:, 1]) <= 0.2) & (pts[:, 0] <= -1.5)
    assert "band" in set(labels[on_strip])


def test_regime_mismatch_raises(attract):
    scn, tables, correctors = attract
    with pytest.raises(RegimeError):
        build_subcorrector(scn, tables, correctors, (0.0, 0.8), "origin")
    with pytest.raises(RegimeError):
        build_subcorrector(scn, tables, correctors, (0.0, 0.0), "plane")


def test_bracket_failure_reports_table_edge(attract):
    scn, tables, correctors = attract
    # the ambient level at this covector exceeds the tangential table's
    # reach, so the branch root cannot be bracketed
    with pytest.raises(BracketError, match="flank"):
        build_subcorrector(scn, tables, correctors, (0.0, 2.8), "plane")


def test_residual_reports_level_violation_exactly(attract):
    # a single plane wave that is too steep: the reported residual is the
    # exact excess of the finite-max Hamiltonian over the level
    scn, _, _ = attract
    p = (0.0, 2.0)
    level = -0.5
    spec = SubcorrectorSpec(
        target=p, regime="plane", case=scn.case, level=level, eta=0.0,
        q_values={}, c=0.0, C=0.0, split_radius=scn.R1, half_width=2.0,
        pieces=(Piece(label="target", kind="affine", slope=p),),
    )
    grid = GridSpec.box(1.0, 1 / 16)
    pts = grid.nodes()
    drift, cost = eval_fields(scn, np.zeros(2), pts)
    expected = float((-(drift @ np.asarray(p)) - cost).max() - level)
    assert expected > 0.0
    res = subsolution_residual(scn, spec, level, grid)
    assert res == pytest.approx(expected, abs=1e-9)
    cert = bellman_certificate(scn, spec, level, grid)
    assert cert > 0.0


def test_residual_field_matches_scalar_report(attract):
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (0.0, 0.8), "plane")
    grid = GridSpec.box(1.5, 1 / 32)
    fld = residual_field(scn, spec, spec.level, grid)
    assert fld.values.shape == (grid.n1, grid.n2)
    scalar = subsolution_residual(scn, spec, spec.level, grid)
    assert scalar == pytest.approx(
        max(float(fld.values.max()), majorant_gap(spec, grid)), abs=1e-12
    )


def test_coverage_check_rejects_oversized_grid(attract):
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (0.0, 0.0), "origin")
    with pytest.raises(ValueError, match="coverage"):
        subsolution_residual(scn, spec, spec.level, GridSpec.box(6.0, 1 / 8))


def test_min_of_certified_fields_stays_certified(attract):
    # seeded random affine pairs: the composed minimum never exceeds the
    # worse input residual by more than the difference slack
    scn, _, _ = attract
    grid = GridSpec.box(1.0, 1 / 16)
    pts = grid.nodes()
    drift, cost = eval_fields(scn, np.zeros(2), pts)
    rng = np.random.default_rng(20240817)
    for _ in range(20):
        p = rng.uniform(-1.2, 1.2, size=2)
        q = rng.uniform(-1.2, 1.2, size=2)
        shift = rng.uniform(-0.5, 0.5)
        u1 = ValueField(grid, (pts @ p).reshape(grid.n1, grid.n2))
        u2 = ValueField(grid, (pts @ q + shift).reshape(grid.n1, grid.n2))
        level = float(
            max((-(drift @ p) - cost).max(), (-(drift @ q) - cost).max())
        )
        r1 = check_min_subsolution(scn, u1, u1, level)
        r2 = check_min_subsolution(scn, u2, u2, level)
        composed = check_min_subsolution(scn, u1, u2, level)
        assert composed <= max(r1, r2) + 1e-6
        assert composed <= 1e-9  # both inputs are exact at this level


def test_min_check_idempotent(attract):
    scn, _, _ = attract
    grid = GridSpec.box(1.0, 1 / 16)
    pts = grid.nodes()
    u = ValueField(grid, (pts @ [0.2, 0.1]).reshape(grid.n1, grid.n2))
    level = 0.0
    alone = check_min_subsolution(scn, u, u, level)
    drift, cost = eval_fields(scn, np.zeros(2), pts)
    expected = float((-(drift @ np.array([0.2, 0.1])) - cost).max()) - level
    assert alone == pytest.approx(expected, abs=1e-9)


def test_min_check_rejects_grid_mismatch(attract):
    scn, _, _ = attract
    g1, g2 = GridSpec.box(1.0, 1 / 16), GridSpec.box(1.0, 1 / 8)
    u1 = ValueField(g1, np.zeros((g1.n1, g1.n2)))
    u2 = ValueField(g2, np.zeros((g2.n1, g2.n2)))
    with pytest.raises(ValueError, match="grid mismatch"):
        check_min_subsolution(scn, u1, u2, 0.0)


def test_corrector_piece_composes_with_affine(attract):
    # one solved band piece against its own escape plane: the composition
    # keeps the certified level of the full construction
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (0.3, 0.0), "line")
    grid = GridSpec.box(1.5, 1 / 32)
    pts = grid.nodes()
    band = next(pc for pc in spec.pieces if pc.kind == "strip")
    plane = next(pc for pc in spec.pieces if pc.label == "escape")
    u1 = ValueField(grid, band.values(pts).reshape(grid.n1, grid.n2))
    u2 = ValueField(grid, plane.values(pts).reshape(grid.n1, grid.n2))
    assert check_min_subsolution(scn, u1, u2, spec.level) <= TOL_CORR


def test_case3_plane_roots_are_mirrored(mirror):
    scn, tables, correctors = mirror
    spec = build_subcorrector(scn, tables, correctors, (0.0, 0.9), "plane")
    assert spec.q_values["q1_minus"] == pytest.approx(-spec.q_values["q1_plus"], abs=2e-3)
    residual, gap, cert = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9
    assert cert <= TOL_CORR


def test_case3_equal_bands_split_along_the_axis(mirror):
    scn, tables, correctors = mirror
    spec = build_subcorrector(scn, tables, correctors, (0.5, 0.1), "line")
    halfplanes = {pc.label: pc.halfplane for pc in spec.pieces}
    assert halfplanes.get("band-minus") == -1
    assert halfplanes.get("band-plus") == +1
    assert any("split along the vertical axis" in note for note in spec.notes)
    residual, gap, _ = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9


def test_case3_origin_build(mirror):
    scn, tables, correctors = mirror
    spec = build_subcorrector(scn, tables, correctors, (0.0, 0.0), "origin")
    residual, gap, cert = _certify(scn, spec, correctors)
    assert residual <= TOL_CORR
    assert gap <= 1e-9
    assert cert <= TOL_CORR


def test_periodic_background_build_is_structurally_sound():
    # The solved correctors of a genuinely periodic medium are curved, so the
    # sampled construction carries an O(h) residual floor (measured to halve
    # from h=1/32 to h=1/64); certify structure and the floor's scale here.
    scn = load_preset("checkerboard")
    tables = tabulate_effective(scn, tol=5e-4)
    correctors = build_corrector_set(scn, h=1 / 32, tol=5e-4)
    spec = build_subcorrector(scn, tables, correctors, (0.0, 0.0), "origin")
    grid = GridSpec.box(2.0, 1 / 32)
    assert majorant_gap(spec, grid) <= 1e-9
    assert subsolution_residual(scn, spec, spec.level, grid) <= 0.05
    # plane pieces carry their periodic correction and sit at the level
    planes = [pc for pc in spec.pieces if pc.kind == "plane"]
    assert planes and all(pc.field is not None for pc in planes)
    for pc in planes:
        if pc.label.startswith("bracket"):
            est = correctors.plane_estimate(pc.slope)
            assert est.constant == pytest.approx(spec.level, abs=5e-3)


def test_spec_csv_round_trips_keys(tmp_path, attract):
    scn, tables, correctors = attract
    spec = build_subcorrector(scn, tables, correctors, (0.3, 0.0), "line")
    path = spec.write_csv(tmp_path / "spec.csv")
    text = path.read_text()
    assert "p_tilde" in text
    assert "band" in text
    assert str(spec.regime) in text
