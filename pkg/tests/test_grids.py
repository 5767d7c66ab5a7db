import numpy as np
import pytest

from hj_strata.grids import GridSpec, ValueField, interpolate


def test_box_factory_counts_and_coords():
    g = GridSpec.box(2.0, 0.25)
    assert (g.n1, g.n2) == (17, 17)
    assert g.coords1()[0] == -2.0 and g.coords1()[-1] == 2.0
    assert not g.periodic1 and not g.periodic2
    assert g.size == 17 * 17


def test_box_rejects_incommensurate_h():
    with pytest.raises(ValueError):
        GridSpec.box(1.0, 0.3)


def test_strip_factory_periodic_axis():
    g = GridSpec.strip(1.0, 2.0, 0.25)
    assert g.periodic1 and not g.periodic2
    assert g.n1 == 4  # period nodes, right endpoint excluded
    assert g.coords2()[0] == -2.0 and g.coords2()[-1] == 2.0


def test_torus_factory():
    g = GridSpec.torus((1.0, 0.5), 0.125)
    assert g.periodic1 and g.periodic2
    assert (g.n1, g.n2) == (8, 4)


def test_anchor_and_flat_index():
    g = GridSpec.box(1.0, 0.5)
    a = g.anchor_index()
    pts = g.nodes()
    assert np.allclose(pts[a], [0.0, 0.0])
    i, j = divmod(a, g.n2)
    assert g.flat_index(i, j) == a


def test_index_of_matches_nodes():
    g = GridSpec.box(1.0, 0.25)
    pts = g.nodes()
    rng = np.random.default_rng(3)
    for k in rng.integers(0, g.size, 25):
        assert g.index_of(tuple(pts[k])) == k


def test_interp_exact_on_affine():
    """Bilinear interpolation reproduces affine functions to rounding error."""
    for g in (GridSpec.box(1.5, 0.25), GridSpec.strip(1.0, 1.5, 0.25)):
        pts = g.nodes()
        vals = (0.7 * pts[:, 0] - 1.3 * pts[:, 1] + 0.2).reshape(g.n1, g.n2)
        f = ValueField(g, vals)
        rng = np.random.default_rng(11)
        q = np.column_stack(
            [
                rng.uniform(pts[:, 0].min(), pts[:, 0].max(), 200),
                rng.uniform(-1.4, 1.4, 200),
            ]
        )
        got = f(q)
        want = 0.7 * q[:, 0] - 1.3 * q[:, 1] + 0.2
        assert np.allclose(got, want, atol=1e-12)


def test_interp_periodic_wraps():
    g = GridSpec.torus(1.0, 0.25)
    pts = g.nodes()
    vals = np.cos(2 * np.pi * pts[:, 0]).reshape(g.n1, g.n2)
    f = ValueField(g, vals)
    q = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.5], [2.0, -0.5]])
    v = f(q)
    assert v[0] == pytest.approx(v[1])
    assert v[0] == pytest.approx(f(np.array([[3.0, 0.25]]))[0], abs=1.0)  # wraps, no error


def test_interp_out_of_range_raises_without_clip():
    g = GridSpec.box(1.0, 0.5)
    f = ValueField(g, np.zeros((g.n1, g.n2)))
    with pytest.raises(ValueError):
        f(np.array([[1.6, 0.0]]))
    # clip mode pins to the boundary instead
    assert f(np.array([[1.6, 0.0]]), clip=True)[0] == 0.0


def test_contains_tolerance():
    g = GridSpec.box(1.0, 0.5)
    pts = np.array([[1.0, 1.0], [1.0 + 1e-13, 0.0], [1.1, 0.0]])
    inside = g.contains(pts)
    assert inside.tolist() == [True, True, False]


def test_value_field_csv_round_trip(tmp_path):
    g = GridSpec.strip(2.0, 1.0, 0.5)
    rng = np.random.default_rng(5)
    f = ValueField(g, rng.normal(size=(g.n1, g.n2)))
    p = f.to_csv(tmp_path / "field.csv")
    back = ValueField.from_csv(p)
    assert back.grid == g
    assert np.array_equal(back.values, f.values)


def test_meta_line_round_trip():
    for g in (GridSpec.box((2.0, 1.0), 0.25), GridSpec.torus(1.0, 0.125)):
        assert GridSpec.from_meta_line(g.meta_line()) == g


def test_interpolate_helper_matches_method():
    g = GridSpec.box(1.0, 0.25)
    vals = np.arange(g.size, dtype=float).reshape(g.n1, g.n2)
    f = ValueField(g, vals)
    q = np.array([[0.1, -0.3], [0.0, 0.0]])
    assert np.array_equal(interpolate(f, q), f(q))
