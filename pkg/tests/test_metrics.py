import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from breakwater_design.metrics import (
    dominates,
    efficiency,
    hypervolume,
    hypervolume_mc,
    nondominated,
    quantile_trace,
    reference_point,
)

points = st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=12)


def test_dominance_examples():
    assert dominates((1, 1), (2, 2))
    assert not dominates((1, 2), (2, 1)) and not dominates((2, 1), (1, 2))
    assert not dominates((1, 1), (1, 1))


def test_hypervolume_hand_values():
    assert hypervolume([(1, 1)], (2, 2)) == 1.0
    assert hypervolume([(1, 2), (2, 1)], (3, 3)) == 3.0
    assert hypervolume([], (3, 3)) == 0.0
    # points on or beyond the reference contribute nothing
    assert hypervolume([(3, 1), (1, 3)], (3, 3)) == 0.0


def test_hypervolume_matches_monte_carlo():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1, (15, 2))
    exact = hypervolume(pts, (1.1, 1.1))
    assert hypervolume_mc(pts, (1.1, 1.1), 200_000) == pytest.approx(exact, rel=0.02)


@settings(max_examples=300)
@given(points, st.tuples(st.floats(0, 10), st.floats(0, 10)))
def test_hypervolume_monotone_and_duplicate_invariant(pts, extra):
    ref = (11.0, 11.0)
    base = hypervolume(pts, ref)
    assert hypervolume(pts + [extra], ref) >= base - 1e-9
    assert hypervolume(pts + pts, ref) == pytest.approx(base)
    worst = tuple(np.max(pts, axis=0))
    assert hypervolume(pts + [worst], ref) == pytest.approx(base)
    assert hypervolume(nondominated(pts), ref) == pytest.approx(base)


def test_efficiency_examples():
    a = [(10.0, 1.0), (20.0, 0.5)]
    assert efficiency(a, a) == {"cost_pct": 0.0, "wh_pct": 0.0}
    half = [(5.0, 1.0), (10.0, 0.5)]
    assert efficiency(half, a)["cost_pct"] == pytest.approx(-50.0)
    with pytest.raises(ValueError):
        efficiency([], a)


@settings(max_examples=200)
@given(points)
def test_efficiency_self_is_zero(pts):
    pts = [(c + 1, w + 1) for c, w in pts]
    e = efficiency(pts, pts)
    assert e["cost_pct"] == pytest.approx(0.0, abs=1e-9)
    assert e["wh_pct"] == pytest.approx(0.0, abs=1e-9)


def test_quantile_trace_examples():
    single = ([0, 10, 20], [1.0, 2.0, 3.0])
    grid, q = quantile_trace([single])
    assert (q == np.array([1.0, 2.0, 3.0])).all()
    grid, q = quantile_trace([([0], [v]) for v in (1.0, 2.0, 3.0)])
    assert q[1, 0] == 2.0
    grid, q = quantile_trace([([0], [v]) for v in (1.0, 2.0, 3.0, 4.0, 5.0)])
    np.testing.assert_array_equal(q[:, 0], [2.0, 3.0, 4.0])


def test_quantile_trace_step_alignment():
    grid, q = quantile_trace([([0, 10], [1.0, 5.0]), ([0, 5], [2.0, 3.0])], qs=(0.5,))
    np.testing.assert_array_equal(grid, [0, 5, 10])
    # nearest-rank median of two values is the lower one
    np.testing.assert_array_equal(q[0], [1.0, 1.0, 3.0])


def test_reference_point():
    ref = reference_point([[(1, 2)], [(3, 1)]])
    np.testing.assert_allclose(ref, [3.15, 2.1])
