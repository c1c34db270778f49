import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import disk_mask, ellipse_mask, full_raster
from echoseg.stats import dice
from echoseg.weaklabel import (
    DegenerateSegment, NoBloodPool, NoCircleFound, WatershedUnseeded, binarize_clean, connected_components,
    convex_hull, dilate, distance_map, distance_seeds, edge_ring, erode, fill_holes, hough_circles,
    hough_preprocess, morphology, watershed,
)


def small_masks(max_side=24):
    return st.integers(4, max_side).flatmap(
        lambda n: arrays(np.bool_, (n, n), elements=st.booleans()))


def blobby_mask(rng, n, density=0.05, grow=2):
    seeds = rng.random((n, n)) < density
    return dilate(seeds, grow) if seeds.any() else seeds


# --- binarize_clean

def test_binarize_single_square():
    px = np.full((128, 128), 0.8)
    px[30:70, 40:80] = 0.05
    mask = binarize_clean(full_raster(px))
    expect = np.zeros_like(mask)
    expect[30:70, 40:80] = True
    assert np.array_equal(mask, expect)


def test_binarize_drops_small_speck():
    px = np.full((128, 128), 0.8)
    px[30:70, 40:80] = 0.05
    px[100:110, 100:110] = 0.05
    mask = binarize_clean(full_raster(px))
    assert mask[30:70, 40:80].all() and not mask[100:110, 100:110].any()


def test_binarize_fills_small_hole():
    px = np.full((128, 128), 0.8)
    px[20:100, 20:100] = 0.05
    px[50:70, 50:70] = 0.8
    mask = binarize_clean(full_raster(px))
    assert mask[20:100, 20:100].all()


def test_binarize_keeps_large_hole():
    px = np.full((128, 128), 0.8)
    px[10:110, 10:110] = 0.05
    px[40:80, 40:80] = 0.8  # 1600 px
    mask = binarize_clean(full_raster(px))
    assert not mask[40:80, 40:80].any()


def test_binarize_errors():
    with pytest.raises(NoBloodPool, match="no blood pool found"):
        binarize_clean(full_raster(np.full((64, 64), 0.9)))
    with pytest.raises(ValueError):
        binarize_clean(full_raster(np.zeros((8, 8))), threshold=1.5)


# --- distance map and seeds

def test_distance_map_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        m = blobby_mask(rng, int(rng.integers(6, 30)))
        assert np.allclose(distance_map(m), oracles.edt(m), atol=1e-12)


def test_two_disks_two_seeds():
    m = disk_mask((200, 200), (100, 50), 30) | disk_mask((200, 200), (100, 150), 30)
    seeds = distance_seeds(m, 20)
    assert len(seeds) == 2
    for center in [(100, 50), (100, 150)]:
        assert min(math.dist(s, center) for s in seeds) <= 2


def test_single_disk_single_seed():
    seeds = distance_seeds(disk_mask((100, 100), (50, 50), 30), 20)
    assert len(seeds) == 1 and math.dist(seeds[0], (50, 50)) <= 1


def _dumbbell():
    # the 20 px bridge is shorter than the suppression radius allows a bridge seed
    m = disk_mask((120, 180), (60, 50), 30) | disk_mask((120, 180), (60, 130), 30)
    m[58:62, 50:130] = True
    return m


def test_dumbbell_two_seeds():
    seeds = distance_seeds(_dumbbell(), 20)
    assert len(seeds) == 2
    assert sorted(min(abs(s[1] - 50), abs(s[1] - 130)) for s in seeds)[-1] <= 2


def test_seeds_match_oracle_on_random_masks():
    rng = np.random.default_rng(1)
    for _ in range(150):
        m = blobby_mask(rng, int(rng.integers(6, 28)), grow=int(rng.integers(1, 4)))
        md = float(rng.choice([1, 1.5, 2, 3, 4.5]))
        assert distance_seeds(m, md) == oracles.seeds(m, md)


def test_seeds_empty_and_invalid():
    assert distance_seeds(np.zeros((5, 5), bool), 3) == []
    with pytest.raises(ValueError):
        distance_seeds(np.ones((5, 5), bool), 0.5)


# --- watershed

def test_disjoint_disks_give_disk_basins():
    a = disk_mask((200, 200), (100, 50), 30)
    b = disk_mask((200, 200), (100, 150), 30)
    basins = watershed(a | b, [(100, 50), (100, 150)])
    assert np.array_equal(basins == 1, a) and np.array_equal(basins == 2, b)


def test_dumbbell_cut_at_bridge():
    m = _dumbbell()
    basins = watershed(m, distance_seeds(m, 20))
    left = disk_mask(m.shape, (60, 50), 30)
    right = disk_mask(m.shape, (60, 130), 30)
    scores = sorted(max(dice(basins == i, left), dice(basins == i, right)) for i in (1, 2))
    assert scores[0] >= 0.95


@pytest.mark.parametrize("seeds", [[(50, 29), (50, 70)], [(29, 49), (70, 49)]])
def test_symmetric_seeds_split_disk_in_half(seeds):
    # the symmetry axis runs between pixel columns, so no pixel sits on the tie line
    m = disk_mask((100, 100), (49.5, 49.5), 40)
    basins = watershed(m, seeds)
    a, b = (basins == 1).sum(), (basins == 2).sum()
    assert a + b == m.sum()
    assert abs(a - b) <= 0.02 * max(a, b)


def test_watershed_errors():
    m = disk_mask((20, 20), (10, 10), 5)
    with pytest.raises(WatershedUnseeded):
        watershed(m, [])
    with pytest.raises(ValueError):
        watershed(m, [(0, 0)])


def test_watershed_matches_flood_oracle():
    rng = np.random.default_rng(2)
    for _ in range(150):
        n = int(rng.integers(6, 32))
        m = blobby_mask(rng, n, grow=int(rng.integers(1, 4)))
        pts = np.argwhere(m)
        if len(pts) == 0:
            continue
        k = int(rng.integers(1, min(5, len(pts)) + 1))
        seeds = [tuple(map(int, p)) for p in pts[rng.choice(len(pts), k, replace=False)]]
        got = watershed(m, seeds)
        markers = np.zeros(m.shape, np.int32)
        for i, p in enumerate(seeds, 1):
            markers[p] = i
        relief = oracles.impose_minima(-oracles.edt(m), markers, m, oracles.NEIGHBOURS4)
        expect = oracles.flood(relief, oracles.flood(relief, markers, m, oracles.NEIGHBOURS4), m)
        assert np.array_equal(got, expect)


@given(seed=st.integers(0, 2**32 - 1))
def test_basins_partition_the_mask(seed):
    rng = np.random.default_rng(seed)
    m = blobby_mask(rng, 40, grow=3)
    seeds = []
    for comp in connected_components(m):
        pts = np.argwhere(comp)
        seeds += [tuple(p) for p in pts[rng.choice(len(pts), min(2, len(pts)), replace=False)]]
    if not seeds:
        return
    basins = watershed(m, seeds)
    assert np.array_equal(basins > 0, m)
    # each pixel carries exactly one label by construction; every seed keeps its own
    assert all(basins[s] == i for i, s in enumerate(seeds, 1))


# --- Hough

def _ring_raster(center, radius, shape=(256, 256)):
    rr, cc = np.indices(shape)
    d = np.hypot(rr - center[0], cc - center[1])
    px = np.where(d <= radius, 0.05, 0.6)
    return full_raster(px)


def test_noiseless_ring_recovered():
    c = hough_circles(hough_preprocess(_ring_raster((128, 128), 50)))[0]
    assert math.dist(c.center, (128, 128)) <= 1 and abs(c.radius - 50) <= 1
    assert 20 <= c.radius <= 80


def test_blank_field_has_no_circle():
    with pytest.raises(NoCircleFound, match="no circle found"):
        hough_circles(hough_preprocess(full_raster(np.full((128, 128), 0.5))))


def test_hough_invariant_to_intensity_scaling():
    rng = np.random.default_rng(3)
    base = _ring_raster((120, 130), 40).pixels * (0.8 + 0.4 * rng.random((256, 256)))
    base = np.clip(base, 0, 1)
    a = hough_circles(hough_preprocess(full_raster(base)))[0]
    b = hough_circles(hough_preprocess(full_raster(base * 0.5)))[0]
    assert (a.center, a.radius) == (b.center, b.radius)


def test_hough_rejects_bad_radius_range():
    with pytest.raises(ValueError):
        hough_circles(hough_preprocess(_ring_raster((128, 128), 50)), r_min=50, r_max=40)


# --- connected components

def test_two_squares_two_components():
    m = np.zeros((20, 20), bool)
    m[2:6, 2:6] = True
    m[10:15, 10:15] = True
    comps = connected_components(m)
    assert len(comps) == 2 and comps[0].sum() == 25


def test_diagonal_touch_is_one_component():
    m = np.zeros((4, 4), bool)
    m[1, 1] = m[2, 2] = True
    assert len(connected_components(m)) == 1


def test_checkerboard_uses_eight_connectivity():
    m = (np.indices((4, 4)).sum(axis=0) % 2).astype(bool)
    assert len(oracles.components(m, oracles.NEIGHBOURS4)) == 8
    assert len(oracles.components(m, oracles.NEIGHBOURS8)) == 1
    assert len(connected_components(m)) == 1


@given(small_masks())
def test_components_match_union_find(m):
    got = [set(map(tuple, np.argwhere(c))) for c in connected_components(m)]
    assert got == oracles.components(m)


# --- morphology

def test_closing_a_disk_is_identity():
    m = disk_mask((101, 101), (50, 50), 25)
    assert np.array_equal(erode(dilate(m, 5), 5), m)


def test_fill_holes_of_ring_gives_disk():
    outer = disk_mask((81, 81), (40, 40), 30)
    inner = disk_mask((81, 81), (40, 40), 20)
    assert np.array_equal(morphology(outer & ~inner, "fill_holes"), outer)


def test_convex_hull_of_l_shape():
    m = np.zeros((40, 40), bool)
    m[5:35, 5:12] = True
    m[28:35, 5:30] = True
    got = morphology(m, "convex_hull")
    ref = oracles.convex_hull(m)
    assert abs(int(got.sum()) - int(ref.sum())) <= 0.01 * ref.sum()
    assert np.array_equal(got, ref)


@given(small_masks(12))
def test_convex_hull_matches_triangle_oracle(m):
    assert np.array_equal(convex_hull(m), oracles.convex_hull(m))


@given(small_masks(16), st.integers(0, 3))
def test_dilate_erode_order_properties(m, r):
    assert np.all(dilate(m, r) >= m)
    assert np.all(erode(m, r) <= m)
    sub = m & np.random.default_rng(r).random(m.shape).__lt__(0.7)
    assert np.all(dilate(sub, r) <= dilate(m, r))
    assert np.all(erode(sub, r) <= erode(m, r))


def test_unknown_morphology_op():
    with pytest.raises(ValueError):
        morphology(np.zeros((3, 3), bool), "open")


# --- edge ring

def test_edge_ring_of_disk():
    m = disk_mask((101, 101), (50, 50), 30)
    ring = edge_ring(m, 2, 2)
    rr, cc = np.nonzero(ring)
    d = np.hypot(rr - 50, cc - 50)
    assert d.min() >= 27 and d.max() <= 33
    # the ring straddles radius 30 along every ray
    theta = np.linspace(0, 2 * np.pi, 90, endpoint=False)
    on_circle = np.rint(np.stack([50 + 30 * np.sin(theta), 50 + 30 * np.cos(theta)])).astype(int)
    assert ring[on_circle[0], on_circle[1]].all()
    assert 3.5 <= ring.sum() / (2 * np.pi * 30) <= 4.5


def test_edge_ring_zero_width_is_empty():
    assert not edge_ring(disk_mask((41, 41), (20, 20), 10), 0, 0).any()


def test_edge_ring_perimeter_of_ellipse():
    a, b = 60, 30
    m = ellipse_mask((201, 201), (100, 100), a, b)
    ring = edge_ring(m, 2, 2)
    h = ((a - b) / (a + b)) ** 2
    perimeter = math.pi * (a + b) * (1 + 3 * h / (10 + math.sqrt(4 - 3 * h)))
    assert abs(ring.sum() / 4 - perimeter) <= 0.1 * perimeter


def test_edge_ring_errors():
    with pytest.raises(DegenerateSegment, match="degenerate segment"):
        edge_ring(np.eye(5, dtype=bool)[:, :1] & False | np.pad(np.ones((1, 2), bool), ((0, 4), (0, 3))))
    with pytest.raises(ValueError):
        edge_ring(disk_mask((41, 41), (20, 20), 10), 1, 2)


def test_fill_holes_is_idempotent():
    m = disk_mask((41, 41), (20, 20), 10) & ~disk_mask((41, 41), (20, 20), 4)
    assert np.array_equal(fill_holes(fill_holes(m)), fill_holes(m))
