import numpy as np
import pytest

from breakwater_design.environment import DomainConfig
from breakwater_design.evolution.operators import random_breakwater, random_system
from breakwater_design.geometry import BreakwaterSystem, is_feasible
from breakwater_design.wavesim import (
    ExternalAdapterConfig,
    WaveField,
    WaveModelError,
    boundary_height,
    external_simulate,
    obstacle_mask,
    simulate,
    wave_height_at_targets,
    wave_objective,
    write_matrix,
)


def flat_domain(depth=50.0, n=16, targets=((8, 4), (3, 12))):
    return DomainConfig(
        n, n, np.full((n, n), depth), np.zeros((n, n), bool), np.zeros((n, n), bool),
        targets=targets, wind_direction=270.0, epsilon=0.5, protection_radius=0.5,
    )


def test_open_water_is_unobstructed():
    d = flat_domain()
    field = simulate(BreakwaterSystem(), d)
    h0 = boundary_height(d)
    np.testing.assert_allclose(field.heights, h0, rtol=1e-12)
    np.testing.assert_allclose(wave_height_at_targets(field, d), [h0, h0])


def test_upwind_breakwater_shelters_target():
    d = flat_domain(targets=((8, 4),))
    base = wave_height_at_targets(simulate(BreakwaterSystem(), d), d)[0]
    # waves travel towards 270 degrees (negative y): upwind is larger y
    wall = BreakwaterSystem.from_lists([[(3.5, 7.5), (12.5, 7.5)]])
    assert is_feasible(wall, d)
    sheltered = wave_height_at_targets(simulate(wall, d), d)[0]
    assert sheltered < base


def test_depth_limited_breaking():
    d = flat_domain()
    bathy = d.bathymetry.copy()
    bathy[:, :4] = 0.8
    d = d.replace(bathymetry=bathy)
    heights = simulate(BreakwaterSystem(), d).heights
    assert (heights <= 0.5 * d.bathymetry + 1e-12).all()


def test_target_readout(dom):
    heights = np.zeros(dom.shape)
    (xa, ya), (xb, yb) = dom.targets
    heights[ya, xa], heights[yb, xb] = 1.2, 0.8
    field = WaveField(heights)
    np.testing.assert_allclose(wave_height_at_targets(field, dom), [1.2, 0.8])
    assert wave_objective(field, dom) == pytest.approx(2.0)
    zero = WaveField(np.zeros(dom.shape))
    np.testing.assert_array_equal(wave_height_at_targets(zero, dom), [0.0, 0.0])
    assert wave_objective(zero, dom) == 0.0


def test_synthetic_unprotected_baseline_positive(dom):
    assert wave_objective(simulate(BreakwaterSystem(), dom), dom) > 0


def test_deterministic_and_zero_on_obstacles(dom):
    sys = random_system(dom, np.random.default_rng(5))
    a, b = simulate(sys, dom), simulate(sys, dom)
    np.testing.assert_array_equal(a.heights, b.heights)
    assert (a.heights[dom.land_mask] == 0).all()
    assert (a.heights[obstacle_mask(sys, dom)] == 0).all()


def test_obstruction_rarely_adds_energy(dom):
    rng = np.random.default_rng(11)
    non_increasing, trials = 0, 0
    while trials < 50:
        sys = random_system(dom, rng)
        line = random_breakwater(dom, rng, 2)
        if line is None or len(sys) >= 3:
            continue
        bigger = BreakwaterSystem(sys.breakwaters + (line,))
        if not is_feasible(bigger, dom):
            continue
        free = ~(obstacle_mask(bigger, dom) | dom.land_mask)
        before = simulate(sys, dom).heights[free].sum()
        after = simulate(bigger, dom).heights[free].sum()
        non_increasing += after <= before + 1e-9
        trials += 1
    assert non_increasing >= 0.95 * trials


@pytest.fixture
def fixture_matrix(tmp_path, dom):
    heights = np.random.default_rng(0).uniform(0.1, 1.5, dom.shape)
    heights[obstacle_mask(BreakwaterSystem(), dom)] = 0.0
    path = tmp_path / "fixture.txt"
    write_matrix(path, heights)
    return path, heights


def test_external_identity_adapter(tmp_path, dom, fixture_matrix, echo_cmd):
    path, heights = fixture_matrix
    adapter = ExternalAdapterConfig(tuple(echo_cmd(str(path))), tmp_path / "xchg")
    field = external_simulate(BreakwaterSystem(), dom, adapter)
    assert field.provenance == "external_model"
    np.testing.assert_array_equal(field.heights, heights)
    assert (tmp_path / "xchg" / "domain.txt").exists()


def test_external_nonzero_exit(tmp_path, dom, fixture_matrix, echo_cmd):
    path, _ = fixture_matrix
    adapter = ExternalAdapterConfig(tuple(echo_cmd(str(path), "--exit", "7")), tmp_path / "xchg")
    with pytest.raises(WaveModelError, match="code 7.*simulated solver failure"):
        external_simulate(BreakwaterSystem(), dom, adapter)


def test_external_negative_values(tmp_path, dom, fixture_matrix, echo_cmd):
    path, _ = fixture_matrix
    adapter = ExternalAdapterConfig(tuple(echo_cmd(str(path), "--negative")), tmp_path / "xchg")
    with pytest.raises(WaveModelError, match="negative"):
        external_simulate(BreakwaterSystem(), dom, adapter)


def test_external_missing_output(tmp_path, dom, fixture_matrix, echo_cmd):
    path, _ = fixture_matrix
    adapter = ExternalAdapterConfig(tuple(echo_cmd(str(path), "--no-output")), tmp_path / "xchg")
    with pytest.raises(WaveModelError, match="waves.txt"):
        external_simulate(BreakwaterSystem(), dom, adapter)
