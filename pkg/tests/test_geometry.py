"""Site geometry unit tests: hulls, half-planes, regions, site indexing."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leakmon.geometry import (
    BoxRegion,
    DegeneratePolygonError,
    Point2,
    SiteSpec,
    clip_polygon,
    convex_hull,
    evaluate_constraints,
    g2_to_g5,
    polygon_to_constraints,
    proximity_penalty,
)

SQUARE = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]


def test_convex_hull_is_ccw_and_minimal():
    pts = SQUARE + [(5.0, 5.0), (5.0, 0.0)]  # interior + edge point
    hull = convex_hull(pts)
    assert hull.shape == (4, 2)
    area2 = 0.0
    for i in range(len(hull)):
        p, q = hull[i], hull[(i + 1) % len(hull)]
        area2 += p[0] * q[1] - q[0] * p[1]
    assert area2 > 0  # counter-clockwise


def test_degenerate_polygons_rejected():
    with pytest.raises(DegeneratePolygonError):
        convex_hull([(0.0, 0.0), (1.0, 1.0)])
    with pytest.raises(DegeneratePolygonError):
        convex_hull([(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)])  # collinear


def test_interior_constraints_signed_distance():
    g2, com, lo, hi = polygon_to_constraints(SQUARE)
    assert g2.shape == (4, 3)
    # Rows are unit-normalized, so values are signed distances.
    assert np.hypot(g2[:, 0], g2[:, 1]) == pytest.approx(np.ones(4), rel=1e-12)
    center = np.array([5.0, 5.0])
    assert np.all(evaluate_constraints(g2, center) == pytest.approx(-5.0))
    outside = np.array([13.0, 5.0])
    assert np.max(evaluate_constraints(g2, outside)) == pytest.approx(3.0)
    assert (com.x, com.y) == (5.0, 5.0)
    assert np.allclose(lo, [0, 0]) and np.allclose(hi, [10, 10])


def test_exterior_flips_signs():
    g_int, *_ = polygon_to_constraints(SQUARE, "interior")
    g_ext, *_ = polygon_to_constraints(SQUARE, "exterior")
    assert np.allclose(g_ext, -g_int)


def test_evaluate_constraints_batch_matches_single():
    g2, *_ = polygon_to_constraints(SQUARE)
    pts = np.array([[5.0, 5.0], [12.0, 3.0], [-1.0, -1.0]])
    batch = evaluate_constraints(g2, pts)
    assert batch.shape == (3, 4)
    for i in range(3):
        assert np.array_equal(batch[i], evaluate_constraints(g2, pts[i]))


def test_g2_to_g5_layout():
    g2 = np.array([[0.6, 0.8, -3.0]])
    g5 = g2_to_g5(g2)
    assert g5.shape == (1, 6)
    assert np.array_equal(g5[0], [0.6, 0.8, 0.0, 0.0, 0.0, -3.0])
    # 5D evaluation ignores z, rate, index.
    v = evaluate_constraints(g5, np.array([1.0, 2.0, 99.0, 99.0, 99.0]))
    assert v[0] == pytest.approx(0.6 + 1.6 - 3.0)


def test_proximity_penalty_decay():
    com = Point2(0.0, 0.0)
    p0 = proximity_penalty((0.0, 0.0), com, phi=1e4, tau=12.0)
    p12 = proximity_penalty((12.0, 0.0), com, phi=1e4, tau=12.0)
    assert p0 == pytest.approx(1e4)
    assert p12 == pytest.approx(1e4 * np.exp(-1.0), rel=1e-12)
    with pytest.raises(ValueError):
        proximity_penalty((1.0, 1.0), com, phi=1.0, tau=0.0)


def test_clip_polygon_halves_square():
    poly = np.asarray(SQUARE, dtype=float)
    clipped = clip_polygon(poly, np.array([1.0, 0.0, -5.0]))  # x <= 5
    assert np.max(clipped[:, 0]) == pytest.approx(5.0)
    assert np.min(clipped[:, 0]) == pytest.approx(0.0)
    gone = clip_polygon(poly, np.array([1.0, 0.0, 5.0]))  # x <= -5
    assert gone.size == 0


def test_box_region_contains_and_bounds():
    box = BoxRegion.from_polygon(SQUARE, z_bounds=(0.0, 4.0), rate_bounds=(0.5, 50.0))
    assert box.contains((5.0, 5.0))
    assert box.contains((0.0, 0.0))  # boundary counts as inside
    assert not box.contains((10.1, 5.0))
    assert np.array_equal(box.lb, [0.0, 0.0, 0.0, 0.5, 1.0])
    assert np.array_equal(box.ub, [10.0, 10.0, 4.0, 50.0, 1.0])


def test_exterior_region_containment_conventions():
    zone = BoxRegion.from_polygon(SQUARE, feasible_side="exterior")
    assert zone.contains((20.0, 20.0))  # outside the hull is feasible
    assert not zone.contains((5.0, 5.0))
    assert zone.strictly_inside_hull((5.0, 5.0))
    assert not zone.strictly_inside_hull((10.0, 5.0))  # boundary not strict


def test_point2_inputs_accepted():
    box = BoxRegion.from_polygon([Point2(0, 0), Point2(4, 0), Point2(4, 4), Point2(0, 4)])
    assert box.contains((2.0, 2.0))


def test_site_spec_index_rewrite_and_lookup():
    master = BoxRegion.from_polygon([(0, 0), (100, 0), (100, 100), (0, 100)])
    sub_a = BoxRegion.from_polygon([(10, 10), (30, 10), (30, 30), (10, 30)], name="a")
    sub_b = BoxRegion.from_polygon([(60, 60), (90, 60), (90, 90), (60, 90)], name="b")
    site = SiteSpec(master=master, subspaces=[sub_a, sub_b])
    assert site.n_boxes == 3
    assert site.master.lb[4] == 1.0 and site.master.ub[4] == 3.0
    assert site.box(2) is sub_a and site.box(3) is sub_b
    assert sub_a.lb[4] == 2.0 == sub_a.ub[4]
    with pytest.raises(IndexError):
        site.box(4)
    assert site.subspace_index_of((20.0, 20.0)) == 2
    assert site.subspace_index_of((70.0, 70.0)) == 3
    assert site.subspace_index_of((50.0, 50.0)) is None


def test_site_rejects_subspace_outside_master():
    master = BoxRegion.from_polygon([(0, 0), (50, 0), (50, 50), (0, 50)])
    stray = BoxRegion.from_polygon([(40, 40), (80, 40), (80, 80), (40, 80)])
    with pytest.raises(ValueError):
        SiteSpec(master=master, subspaces=[stray])


def test_evaluation_points_union():
    master = BoxRegion.from_polygon([(0, 0), (100, 0), (100, 100), (0, 100)])
    sub = BoxRegion.from_polygon(
        [(10, 10), (30, 10), (30, 30), (10, 30)], epts=[(12, 12), (28, 28)]
    )
    site = SiteSpec(master=master, subspaces=[sub])
    assert site.evaluation_points().shape == (2, 2)
    bare = SiteSpec(master=BoxRegion.from_polygon([(0, 0), (100, 0), (100, 100), (0, 100)]))
    assert bare.evaluation_points().shape == (1, 2)  # master center of mass


def test_local_to_gps_affine():
    master = BoxRegion.from_polygon([(0, 0), (100, 0), (100, 100), (0, 100)])
    affine = np.array([[1e-5, 0.0, 40.0], [0.0, 1e-5, -105.0]])
    site = SiteSpec(master=master, affine_to_gps=affine)
    lat, lon = site.local_to_gps((100.0, 200.0))
    assert lat == pytest.approx(40.001)
    assert lon == pytest.approx(-104.998)
    assert SiteSpec(master=master).local_to_gps((0, 0)) is None


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.floats(-50, 50, allow_nan=False, width=32),
            st.floats(-50, 50, allow_nan=False, width=32),
        ),
        min_size=3,
        max_size=12,
    )
)
def test_hull_vertices_satisfy_own_constraints(pts):
    arr = np.asarray(pts, dtype=float)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # random inputs are rarely convex
            g2, com, lo, hi = polygon_to_constraints(arr)
    except DegeneratePolygonError:
        return
    hull = convex_hull(arr)
    vals = evaluate_constraints(g2, hull)
    assert np.max(vals) <= 1e-7
    assert evaluate_constraints(g2, com.as_array()).max() < 0
