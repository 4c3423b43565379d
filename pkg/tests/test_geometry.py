import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from breakwater_design.geometry import (
    BreakwaterSystem,
    as_polyline,
    check_constraints,
    cost,
    point_segment_distance,
    rasterize,
    rasterize_polylines,
    supercover_cells,
    supercover_many,
)


def sampled_cells(x0, y0, x1, y1, n=1000):
    """Cells visited by dense sampling along the segment (rasterization oracle)."""
    t = np.linspace(0.0, 1.0, n)
    xs, ys = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
    return {(int(np.floor(x)), int(np.floor(y))) for x, y in zip(xs, ys)}


def test_cost_three_four_five():
    assert cost(BreakwaterSystem.from_lists([[(0, 0), (3, 4)]])) == 5.0


def test_cost_empty():
    assert cost(BreakwaterSystem()) == 0.0


def test_cost_two_breakwaters():
    sys = BreakwaterSystem.from_lists([[(0, 0), (1, 0), (1, 1)], [(5, 5), (5, 7)]])
    assert cost(sys) == pytest.approx(1 + 1 + 2)


def test_polyline_rejects_repeated_nodes():
    with pytest.raises(ValueError):
        as_polyline([(1, 1), (1, 1)])
    with pytest.raises(ValueError):
        as_polyline([(1, 1)])


def test_feasible_segment_in_open_water(open_water):
    sys = BreakwaterSystem.from_lists([[(1.5, 1.5), (3.5, 1.5)]])
    assert check_constraints(sys, open_water).feasible


def test_out_of_bounds_node(open_water):
    sys = BreakwaterSystem.from_lists([[(1.5, 1.5), (9.5, 1.5)]])
    verdict = check_constraints(sys, open_water)
    assert not verdict.feasible
    assert "out_of_bounds" in verdict.kinds


def test_too_close_to_target(open_water):
    # target (6, 6); eps 1. A segment whose line passes eps/2 from it, built
    # from the point-to-segment formula: horizontal at y = 6 + 0.5.
    sys = BreakwaterSystem.from_lists([[(2.2, 6.5), (7.8, 6.5)]])
    dist = point_segment_distance(np.array([[6.0, 6.0]]), sys.segments())[0, 0]
    assert dist == pytest.approx(0.5)
    verdict = check_constraints(sys, open_water.replace(protection_radius=0.0))
    assert "too_close_target" in verdict.kinds


def test_protection_area_violation(open_water):
    sys = BreakwaterSystem.from_lists([[(4.5, 6.2), (7.5, 6.2)]])
    assert "in_protection" in check_constraints(sys, open_water).kinds


def test_prohibited_and_structure(dom):
    # the synthetic prohibited box spans x in [3, 13), y in [35, 51)
    sys = BreakwaterSystem.from_lists([[(4.5, 40.5), (10.5, 40.5)]])
    assert "in_prohibited" in check_constraints(sys, dom).kinds
    x, y = dom.static_structures[0][1]
    near = BreakwaterSystem.from_lists([[(x + 0.5, y + 0.3), (x + 0.5, y + 5.0)]])
    assert "too_close_structure" in check_constraints(near, dom).kinds


def test_rasterize_horizontal_segment():
    mask = rasterize_polylines([((0.5, 0.5), (3.5, 0.5))], (5, 5))
    assert set(zip(*np.nonzero(mask.T))) == {(0, 0), (1, 0), (2, 0), (3, 0)}
    assert sampled_cells(0.5, 0.5, 3.5, 0.5) == {(0, 0), (1, 0), (2, 0), (3, 0)}


def test_rasterize_empty(dom):
    assert not rasterize(BreakwaterSystem(), dom).any()


def test_rasterize_diagonal_covers_sampled_path():
    mask = rasterize_polylines([((0.5, 0.5), (2.5, 2.5))], (5, 5))
    marked = set(zip(*np.nonzero(mask.T)))
    assert sampled_cells(0.5, 0.5, 2.5, 2.5) <= marked


@settings(max_examples=200)
@given(st.lists(st.floats(0.05, 15.95), min_size=4, max_size=4))
def test_supercover_contains_sampled_cells(c):
    x0, y0, x1, y1 = c
    if np.hypot(x1 - x0, y1 - y0) < 1e-6:
        return
    cells = {tuple(v) for v in supercover_cells(x0, y0, x1, y1)}
    assert sampled_cells(x0, y0, x1, y1, 4000) <= cells


def touches_square(x0, y0, x1, y1, i, j):
    """Liang-Barsky: does the closed segment meet the closed unit square at (i, j)?"""
    lo, hi = 0.0, 1.0
    for p, q in ((-(x1 - x0), x0 - i), (x1 - x0, i + 1 - x0), (-(y1 - y0), y0 - j), (y1 - y0, j + 1 - y0)):
        if p == 0:
            if q < 0:
                return False
        elif p < 0:
            lo = max(lo, q / p)
        else:
            hi = min(hi, q / p)
    return lo <= hi


quarter = st.integers(0, 48).map(lambda k: k / 4)


@settings(max_examples=300)
@given(st.lists(st.one_of(quarter, st.floats(0.0, 12.0).filter(lambda v: abs(v - round(v)) > 1e-6)), min_size=4, max_size=4))
def test_supercover_matches_square_intersection(c):
    x0, y0, x1, y1 = c
    if (x0, y0) == (x1, y1):
        return
    got = {tuple(v) for v in supercover_cells(x0, y0, x1, y1)}
    want = {
        (i, j)
        for i in range(int(np.floor(min(x0, x1))) - 1, int(np.floor(max(x0, x1))) + 1)
        for j in range(int(np.floor(min(y0, y1))) - 1, int(np.floor(max(y0, y1))) + 1)
        if touches_square(x0, y0, x1, y1, i, j)
    }
    assert got == want


def test_supercover_many_is_union_of_segments():
    rng = np.random.default_rng(3)
    segs = rng.uniform(0, 20, size=(30, 4))
    segs[5] = [2.0, 3.0, 7.0, 3.0]
    segs[6] = [4.0, 1.0, 4.0, 9.0]
    many = {tuple(v) for v in supercover_many(segs)}
    assert many == set().union(*({tuple(v) for v in supercover_cells(*s)} for s in segs))


def test_rasterize_excludes_static_structures(dom):
    assert not rasterize(BreakwaterSystem(), dom)[dom.static_mask].any()
