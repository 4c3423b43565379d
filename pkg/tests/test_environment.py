import numpy as np
import pytest

from breakwater_design.environment import (
    DomainConfig,
    DomainParseError,
    DomainValidationError,
    domain_from_text,
    load_domain,
    save_domain,
    synthetic_case,
)


def test_minimal_open_water(open_water):
    assert open_water.shape == (8, 8)
    assert len(open_water.targets) == 1


def test_target_on_land_names_the_target():
    land = np.zeros((8, 8), bool)
    land[0, :] = True
    with pytest.raises(DomainValidationError, match="target 0"):
        DomainConfig(8, 8, np.where(land, 0.0, 5.0), land, np.zeros((8, 8), bool), targets=((3, 0),))


def test_synthetic_case_layout(dom):
    assert len(dom.targets) == 2
    assert len(dom.static_structures) == 2
    water = ~dom.land_mask
    lower_left = dom.bathymetry[np.argmax(water[:, 0]), 0]
    assert lower_left < dom.bathymetry[-1, -1]
    assert dom.prohibited_mask.any()


def test_synthetic_case_deterministic():
    assert synthetic_case() == synthetic_case()
    assert synthetic_case(32) != synthetic_case()


def test_roundtrip(tmp_path, dom):
    path = tmp_path / "dom.yaml"
    save_domain(dom, path)
    assert load_domain(path) == dom


def test_malformed_file():
    with pytest.raises(DomainParseError):
        domain_from_text("width: [unclosed")
    with pytest.raises(DomainParseError):
        domain_from_text("- a list")


def test_missing_file(tmp_path):
    with pytest.raises(DomainParseError):
        load_domain(tmp_path / "nope.yaml")
