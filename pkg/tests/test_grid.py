import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from bevlayout.grid import (Box2D, CellIndex, GridMismatchError, GridSpec, LayoutGrid, cell_center,
                            connected_components, grid_from_images, grid_iou, grid_to_images, occlusion_mask,
                            rasterize_box, rasterize_boxes, read_bevg, world_to_cell, world_to_cell_array,
                            write_bevg)

SPEC = GridSpec()
SMALL = GridSpec(extent_forward=16.0, extent_lateral=16.0, rows=16, cols=16)

binary16 = arrays(np.float32, (16, 16), elements=st.sampled_from([0.0, 1.0]))


def grid(a, spec=SMALL):
    return LayoutGrid(np.asarray(a, np.float32), spec)


# --- GridSpec / LayoutGrid ------------------------------------------------------

def test_default_cell_size():
    assert SPEC.cell_size_forward == pytest.approx(0.3125)
    assert SPEC.cell_size_lateral == pytest.approx(0.3125)


@pytest.mark.parametrize("kw", [dict(rows=0), dict(cols=0), dict(extent_forward=0.0), dict(extent_lateral=-1.0)])
def test_gridspec_rejects_degenerate(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def test_layoutgrid_range_and_shape_checks():
    with pytest.raises(ValueError):
        LayoutGrid(np.full((16, 16, 1), 1.5), SMALL)
    with pytest.raises(ValueError):
        LayoutGrid(np.full((16, 16, 1), np.nan), SMALL)
    with pytest.raises(GridMismatchError):
        LayoutGrid(np.zeros((8, 16, 1)), SMALL)
    g = LayoutGrid(np.zeros((16, 16)), SMALL)
    assert g.values.shape == (16, 16, 1) and g.is_binary


def test_binarize_and_flip():
    v = np.zeros((16, 16, 1), np.float32)
    v[0, 0] = 0.7
    v[0, 1] = 0.3
    g = LayoutGrid(v, SMALL)
    b = g.binarize(0.5)
    assert b.values[0, 0, 0] == 1 and b.values[0, 1, 0] == 0
    f = g.flip_lateral()
    assert f.values[0, 15, 0] == pytest.approx(0.7)
    np.testing.assert_array_equal(f.flip_lateral().values, g.values)


# --- world_to_cell ----------------------------------------------------------------

def test_world_to_cell_examples():
    assert world_to_cell(0.0, 20.0, SPEC) == CellIndex(64, 64)
    assert world_to_cell(-20.0, 0.0, SPEC) == CellIndex(127, 0)
    assert world_to_cell(0.0, 45.0, SPEC) is None
    assert world_to_cell(0.0, 40.0, SPEC) is None
    assert world_to_cell(20.0, 10.0, SPEC) is None
    assert world_to_cell(0.0, -0.01, SPEC) is None


@given(st.integers(0, 127), st.integers(0, 127))
def test_cell_center_round_trip(row, col):
    x, z = cell_center((row, col), SPEC)
    assert world_to_cell(x, z, SPEC) == (row, col)


@given(st.lists(st.tuples(st.floats(-25, 25), st.floats(-5, 45)), min_size=1, max_size=40))
def test_world_to_cell_array_matches_scalar(points):
    x = np.array([p[0] for p in points])
    z = np.array([p[1] for p in points])
    rows, cols, ok = world_to_cell_array(x, z, SPEC)
    for i, (px, pz) in enumerate(points):
        c = world_to_cell(px, pz, SPEC)
        assert (c is not None) == ok[i]
        if c is not None:
            assert (rows[i], cols[i]) == c


# --- rasterize_box ----------------------------------------------------------------

def test_rasterize_full_cover_and_degenerate():
    assert rasterize_box(Box2D(0, 20, 100, 100), SPEC).values.sum() == 16384
    assert rasterize_box(Box2D(0, 20, 0, 0), SPEC).values.sum() == 0
    with pytest.raises(ValueError):
        rasterize_box(Box2D(0, 20, -1, 2), SPEC)


def test_rasterize_2m_box_matches_brute_force():
    box = Box2D(0.0, 20.0, 2.0, 2.0)
    got = rasterize_box(box, SPEC).values[:, :, 0]
    np.testing.assert_array_equal(got, oracles.raster(box, SPEC))
    # 2 m spans 6.4 cells; strict containment of centres gives 6 per axis
    assert got.sum() == 36


@given(st.floats(-7, 7), st.floats(1, 15), st.floats(0, 6), st.floats(0, 6), st.floats(-np.pi, np.pi))
def test_rasterize_matches_brute_force_random(x, z, length, width, yaw):
    box = Box2D(x, z, length, width, yaw)
    np.testing.assert_array_equal(rasterize_box(box, SMALL).values[:, :, 0], oracles.raster(box, SMALL))


@given(st.floats(-5, 5), st.floats(3, 13), st.floats(0, 5), st.floats(0, 5), st.floats(0, 3), st.floats(0, 3),
       st.floats(-np.pi, np.pi))
def test_rasterize_monotone_for_nested_boxes(x, z, length, width, dl, dw, yaw):
    inner = rasterize_box(Box2D(x, z, length, width, yaw), SMALL).values
    outer = rasterize_box(Box2D(x, z, length + dl, width + dw, yaw), SMALL).values
    assert inner.sum() <= outer.sum()
    assert np.all(outer >= inner)


def test_rasterize_boxes_is_union():
    a, b = Box2D(-3, 10, 4, 2), Box2D(3, 20, 4, 2, 0.5)
    u = rasterize_boxes([a, b], SPEC).values
    np.testing.assert_array_equal(u, np.maximum(rasterize_box(a, SPEC).values, rasterize_box(b, SPEC).values))


# --- grid_iou ------------------------------------------------------------------------

def test_iou_examples():
    g = np.zeros((16, 16), np.float32)
    g[2:6, 2:6] = 1
    h = np.zeros((16, 16), np.float32)
    h[10:12, 10:12] = 1
    assert grid_iou(grid(g), grid(g))[0] == 1.0
    assert grid_iou(grid(g), grid(h))[0] == 0.0
    assert grid_iou(grid(np.zeros((16, 16))), grid(np.zeros((16, 16))))[0] == 1.0


def test_iou_spec_mismatch():
    with pytest.raises(GridMismatchError):
        grid_iou(LayoutGrid.zeros(SMALL), LayoutGrid.zeros(GridSpec(rows=16, cols=16)))
    with pytest.raises(GridMismatchError):
        grid_iou(LayoutGrid.zeros(SMALL, 1), LayoutGrid.zeros(SMALL, 2))


@given(binary16, binary16)
def test_iou_matches_brute_force(a, b):
    assert grid_iou(grid(a), grid(b))[0] == pytest.approx(oracles.iou(a, b), abs=1e-12)


@given(binary16, binary16, binary16)
def test_iou_masked_matches_brute_force(a, b, m):
    got = grid_iou(grid(a), grid(b), mask=grid(m))[0]
    assert got == pytest.approx(oracles.iou(a, b, m.astype(bool)), abs=1e-12)


@given(binary16, binary16)
def test_iou_symmetric_bounded_reflexive(a, b):
    ab = grid_iou(grid(a), grid(b))[0]
    assert ab == grid_iou(grid(b), grid(a))[0]
    assert 0.0 <= ab <= 1.0
    assert grid_iou(grid(a), grid(a))[0] == 1.0


def test_iou_is_per_channel():
    a = np.zeros((16, 16, 2), np.float32)
    b = np.zeros((16, 16, 2), np.float32)
    a[:8, :, 0] = 1
    b[:4, :, 0] = 1
    a[:, :, 1] = 1
    got = grid_iou(LayoutGrid(a, SMALL), LayoutGrid(b, SMALL))
    np.testing.assert_allclose(got, [0.5, 0.0])


# --- connected components ------------------------------------------------------------

def test_components_examples():
    assert connected_components(LayoutGrid.zeros(SPEC)) == []
    v = np.zeros((128, 128), np.float32)
    v[60:64, 30:34] = 1
    (blob,) = connected_components(LayoutGrid(v, SPEC))
    assert blob.size == 16 and blob.bbox == (60, 30, 63, 33)
    # geometric centre of the block: rows 60..63 and cols 30..33
    assert blob.centroid[0] == pytest.approx(-20 + 32 * 0.3125)
    assert blob.centroid[1] == pytest.approx(40 - 62 * 0.3125)
    d = np.zeros((16, 16), np.float32)
    d[2:4, 2:4] = 1
    d[4:6, 4:6] = 1
    assert len(connected_components(grid(d))) == 1


@given(binary16)
def test_components_match_flood_fill(a):
    blobs = connected_components(grid(a))
    got = sorted(sorted(map(tuple, b.cells.tolist())) for b in blobs)
    assert got == oracles.components(a)
    assert sum(b.size for b in blobs) == int(a.sum())
    for b in blobs:
        rows, cols = b.cells[:, 0], b.cells[:, 1]
        assert b.bbox == (rows.min(), cols.min(), rows.max(), cols.max())
        xs, zs = zip(*(cell_center(c, SMALL) for c in b.cells))
        assert b.centroid == pytest.approx((np.mean(xs), np.mean(zs)))


def test_components_rejects_multichannel():
    with pytest.raises(GridMismatchError):
        connected_components(LayoutGrid.zeros(SMALL, 2))


# --- occlusion_mask -------------------------------------------------------------------

def test_occlusion_examples():
    band = np.zeros((16, 16), np.float32)
    band[:, 5:11] = 1
    assert occlusion_mask(grid(band), grid(band)).values.sum() == 0
    np.testing.assert_array_equal(occlusion_mask(grid(np.zeros((16, 16))), grid(band)).values[:, :, 0], band)
    holed = band.copy()
    holed[3:7, 6:9] = 0
    hole = band - holed
    np.testing.assert_array_equal(occlusion_mask(grid(holed), grid(band)).values[:, :, 0], hole)


@given(binary16, binary16)
def test_occlusion_properties(vis, fused):
    m = occlusion_mask(grid(vis), grid(fused)).values[:, :, 0]
    assert not np.any(m.astype(bool) & vis.astype(bool))
    assert np.all(m <= fused)


def test_occlusion_spec_mismatch():
    with pytest.raises(GridMismatchError):
        occlusion_mask(LayoutGrid.zeros(SMALL), LayoutGrid.zeros(SPEC))


# --- file formats -----------------------------------------------------------------------

def test_bevg_round_trip_and_layout(tmp_path, rng):
    spec = GridSpec(30.0, 20.0, 12, 10, 1.7)
    g = LayoutGrid(rng.random((12, 10, 2)).astype(np.float32), spec)
    path = tmp_path / "g.bevg"
    write_bevg(path, g)
    data = path.read_bytes()
    assert data[:4] == b"BEVG" and data[4] == 1
    assert len(data) == 4 + 1 + 12 + 32 + 12 * 10 * 2 * 4
    back = read_bevg(path)
    assert back.spec == spec
    np.testing.assert_array_equal(back.values, g.values)


def test_bevg_rejects_corrupt(tmp_path):
    p = tmp_path / "bad.bevg"
    p.write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(ValueError):
        read_bevg(p)
    write_bevg(p, LayoutGrid.zeros(SMALL))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ValueError):
        read_bevg(p)


def test_image_round_trip(tmp_path):
    v = np.zeros((16, 16, 2), np.float32)
    v[3, 4, 0] = 1.0
    v[5, 6, 1] = 0.5
    g = LayoutGrid(v, SMALL)
    ims = grid_to_images(g)
    assert len(ims) == 2 and ims[1].getpixel((6, 5)) == 128
    back = grid_from_images(ims, SMALL)
    np.testing.assert_allclose(back.values, np.round(v * 255) / 255)
