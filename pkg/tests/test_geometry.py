import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import ndimage

from errors import DegenerateGeometry, ResolutionError
from geometry import (build_potential, build_rectangle, build_t_track, check_resolution, distance_field,
                      export_mask_pgm, export_potential_csv, gradient_at, mask_pgm, potential_at, potential_for,
                      resolved_cell_size)
from params import GeometryConfig, MaterialParams

SMALL = GeometryConfig(length=60e-9, width=36e-9, cell_size=0.1e-9, arm_width_in=12e-9, arm_width_out=18e-9,
                       throat_width=8e-9, throat_length=10e-9, stem_width=10e-9, foot_width=6e-9,
                       foot_length=10e-9)


def brute_force_distance(mask, h):
    padded = np.pad(mask, 1, mode='constant', constant_values=False)
    vac = np.argwhere(~padded)
    out = np.zeros(mask.shape)
    for i, j in np.argwhere(mask):
        d2 = (vac[:, 0] - (i + 1)) ** 2 + (vac[:, 1] - (j + 1)) ** 2
        out[i, j] = math.sqrt(d2.min()) * h
    return out


def test_baseline_track_shape():
    g = build_t_track(GeometryConfig(), MaterialParams())
    assert (g.nx, g.ny) == (300, 100)
    assert g.mask.any() and not g.mask.all()
    _, regions = ndimage.label(g.mask)
    assert regions == 1
    assert g.throat_width <= g.arm_width_in
    assert g.widen_side == "right"


def test_fine_track_shape():
    g = build_t_track(SMALL, MaterialParams())
    assert (g.nx, g.ny) == (600, 360)
    _, regions = ndimage.label(g.mask)
    assert regions == 1


def test_arms_share_top_edge():
    g = build_t_track(GeometryConfig(), MaterialParams())
    assert g.mask[:, -1].all()
    # narrow input arm on the left, wide output arm plus stem on the right
    assert g.mask[10].sum() == 40
    assert g.mask[-10].sum() == 60
    assert g.mask[int(g.throat_x[1] / g.cell_size) + 5].all()


def test_zero_throat_rejected():
    with pytest.raises(DegenerateGeometry):
        build_t_track(GeometryConfig(throat_width=0.0), MaterialParams())


def test_foot_leaves_vacuum_bar():
    g = build_t_track(GeometryConfig(), MaterialParams())
    column = g.mask[240]
    assert column[:30].all()
    assert not column[30:40].any()
    assert column[40:].all()
    # stem column is solid down to the bottom edge
    assert g.mask[190].all()
    assert not g.mask[280, :40].any()


def test_foot_as_wide_as_the_gap_rejected():
    with pytest.raises(DegenerateGeometry):
        build_t_track(GeometryConfig(foot_width=40e-9), MaterialParams())


def test_trackless_foot_keeps_plain_stem():
    g = build_t_track(GeometryConfig(foot_width=0.0), MaterialParams())
    assert g.mask[190].all()
    assert not g.mask[240, :40].any()


@pytest.mark.parametrize("Ku, expected", [(0.8e6, 0.866e-9), (1.5e6, 0.632e-9)])
def test_resolved_cell_size(Ku, expected):
    assert resolved_cell_size(MaterialParams(Ku=Ku)) == pytest.approx(expected, rel=0.02)
    check_resolution(resolved_cell_size(MaterialParams(Ku=Ku)), MaterialParams(Ku=Ku), 0.0)


@pytest.mark.parametrize("layout", [
    GeometryConfig(throat_width=50e-9),
    GeometryConfig(arm_width_out=30e-9),
    GeometryConfig(arm_width_out=120e-9),
    GeometryConfig(junction_x=0.9),
])
def test_layouts_that_do_not_fit(layout):
    with pytest.raises(DegenerateGeometry):
        build_t_track(layout, MaterialParams())


def test_mesh_rule():
    check_resolution(1e-9, MaterialParams(Ku=0.8e6), 0.25)
    with pytest.raises(ResolutionError):
        build_t_track(GeometryConfig(), MaterialParams(Ku=1.5e6))
    check_resolution(1e-9, MaterialParams(Ku=1.5e6), 0.6)


def test_left_widening_is_mirror_image():
    material = MaterialParams()
    right = build_t_track(GeometryConfig(), material)
    left = build_t_track(GeometryConfig(widen_side="left"), material)
    assert np.array_equal(left.mask, right.mask[::-1, :])
    assert left.widen_side == "left"
    assert left.left_arm == right.right_arm
    assert np.array_equal(right.mirror().mirror().mask, right.mask)


def test_straight_channel_centerline_distance():
    g = build_rectangle(60e-9, 20e-9, 1e-9)
    d = distance_field(g)
    assert d[30, 9] == pytest.approx(10e-9, abs=1e-9)
    assert d[30, 10] == pytest.approx(10e-9, abs=1e-9)


def test_edge_cell_distance():
    g = build_t_track(GeometryConfig(), MaterialParams())
    d = distance_field(g)
    edge = g.mask & ~ndimage.binary_erosion(g.mask, border_value=0)
    assert np.all(d[edge] > 0)
    assert np.all(d[edge] <= g.cell_size * math.sqrt(2) + 1e-18)
    assert np.all(d[~g.mask] == 0)


@pytest.mark.parametrize("seed", range(5))
def test_distance_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    h = 1e-9
    g = build_rectangle(32 * h, 32 * h, h)
    mask = rng.random((32, 32)) < 0.8
    g = replace(g, mask=mask)
    assert np.allclose(distance_field(g), brute_force_distance(mask, h), rtol=1e-12, atol=0)


def test_straight_channel_potential_symmetric():
    g = build_rectangle(60e-9, 20e-9, 1e-9)
    pot = build_potential(g, 1e-20, 3e-9)
    assert np.allclose(pot.U, pot.U[:, ::-1], rtol=1e-14)
    middle = pot.U[30]
    assert middle.argmin() in (9, 10)
    assert np.all(pot.U >= 0)


def test_potential_decreases_with_distance():
    g = build_t_track(GeometryConfig(), MaterialParams())
    pot = build_potential(g, 5e-20, 4e-9)
    d = distance_field(g)[g.mask]
    U = pot.U[g.mask]
    order = np.argsort(d, kind='stable')
    assert np.all(np.diff(U[order]) <= 1e-30)
    assert U.max() <= 5e-20


def test_potential_one_over_e():
    g = build_rectangle(40e-9, 40e-9, 1e-9)
    d = distance_field(g)
    lam = d[20, 10]
    pot = build_potential(g, 2e-20, lam)
    assert pot.U[20, 10] == pytest.approx(2e-20 / math.e, rel=1e-14)


def test_gradient_matches_finite_differences():
    g = build_t_track(GeometryConfig(), MaterialParams())
    pot = potential_for(g, GeometryConfig(), MaterialParams())
    h = g.cell_size
    rng = np.random.default_rng(7)
    interior = np.argwhere(ndimage.binary_erosion(g.mask, border_value=0))
    for i, j in interior[rng.choice(len(interior), 50, replace=False)]:
        gx = (pot.U[i + 1, j] - pot.U[i - 1, j]) / (2 * h)
        gy = (pot.U[i, j + 1] - pot.U[i, j - 1]) / (2 * h)
        assert pot.grad[i, j, 0] == pytest.approx(gx, rel=1e-8, abs=1e-30)
        assert pot.grad[i, j, 1] == pytest.approx(gy, rel=1e-8, abs=1e-30)


def test_potential_vanishes_far_from_edges():
    g = build_rectangle(100e-9, 100e-9, 1e-9)
    lam = 1e-9
    pot = build_potential(g, 1e-20, lam)
    far = distance_field(g) > 30 * lam
    assert far.any()
    assert np.all(pot.U[far] < 1e-12 * 1e-20)
    assert np.all(np.abs(pot.grad[far]) * lam < 1e-12 * 1e-20)


def test_invalid_potential_parameters():
    g = build_rectangle(10e-9, 10e-9, 1e-9)
    with pytest.raises(ValueError):
        build_potential(g, 0.0, 1e-9)
    with pytest.raises(ValueError):
        build_potential(g, 1e-20, 0.0)


def test_interpolation_at_cell_centers():
    g = build_t_track(GeometryConfig(), MaterialParams())
    pot = build_potential(g, 5e-20, 4e-9)
    xs, ys = g.centers
    assert potential_at(pot, xs[120, 80], ys[120, 80]) == pytest.approx(pot.U[120, 80], rel=1e-12)
    assert np.allclose(gradient_at(pot, xs[120, 80], ys[120, 80]), pot.grad[120, 80], rtol=1e-12)
    # clamped outside the raster
    assert potential_at(pot, -1e-9, -1e-9) == pytest.approx(pot.U[0, 0])


def test_mask_export(tmp_path):
    g = build_t_track(GeometryConfig(), MaterialParams())
    path = tmp_path / "mask.pgm"
    export_mask_pgm(g, str(path))
    data = path.read_bytes()
    assert data == mask_pgm(g)
    header = b"P5\n300 100\n255\n"
    assert data.startswith(header)
    pixels = np.frombuffer(data[len(header):], dtype=np.uint8).reshape(100, 300)
    # first image row is the top edge of the track
    assert np.all(pixels[0] == 255)
    assert set(np.unique(pixels)) == {0, 255}


def test_potential_export(tmp_path):
    g = build_rectangle(5e-9, 4e-9, 1e-9)
    pot = build_potential(g, 1e-20, 1e-9)
    path = tmp_path / "potential.csv"
    export_potential_csv(g, pot, str(path))
    lines = path.read_text(encoding="utf-8").split("\n")
    assert lines[0] == "x_nm,y_nm,U_joule"
    assert len([line for line in lines[1:] if line]) == 20
