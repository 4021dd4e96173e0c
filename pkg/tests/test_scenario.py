import math

import numpy as np
import pytest

from phaseloc.scenario import (BOLTZMANN, Scenario, SeededRng, dbm_to_watts, default_scenario,
                               grid_layout, grid_scenario, load_config, scenario_from_config,
                               thermal_noise_power, watts_to_dbm)


def test_noise_power_matches_ktw():
    assert thermal_noise_power(120e3, 290.0) == pytest.approx(BOLTZMANN * 290.0 * 120e3, rel=1e-15)
    assert thermal_noise_power(120e3, 290.0) == pytest.approx(4.8047e-16, rel=1e-4)


def test_dbm_round_trip():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(5.0) == pytest.approx(3.1623e-3, rel=1e-4)
    assert watts_to_dbm(dbm_to_watts(-7.5)) == pytest.approx(-7.5)


def test_default_scenario_shape_and_wavelength(sc):
    assert sc.n_aps == 20
    assert sc.wavelength == pytest.approx(0.0856550, rel=1e-6)
    assert sc.contains(sc.ap_positions).all()
    assert sc.phase_offset == pytest.approx(math.radians(10))


def test_default_scenario_is_seeded():
    a, b, c = default_scenario(3), default_scenario(3), default_scenario(4)
    assert np.array_equal(a.ap_positions, b.ap_positions)
    assert a.digest() == b.digest()
    assert not np.array_equal(a.ap_positions, c.ap_positions)


def test_scenario_is_immutable(sc):
    with pytest.raises(ValueError):
        sc.ap_positions[0, 0] = 1.0
    with pytest.raises(Exception):
        sc.tx_power = 1.0


@pytest.mark.parametrize("kw, msg", [
    ({"ap_positions": [[0, 0], [1, 1]]}, "at least 3"),
    ({"ap_positions": [[0, 0], [1, 1], [1, 1]]}, "distinct"),
    ({"ap_positions": [[0, 0], [1, 1], [20, 1]]}, "inside"),
    ({"ap_positions": [[0, 0], [1, 1], [2, 1]], "pilot": 2.0}, "unit modulus"),
    ({"ap_positions": [[0, 0], [1, 1], [2, 1]], "tx_power": -1.0}, "positive"),
    ({"ap_positions": [[0, 0], [1, 1], [2, 1]], "area": (0, 0, 0, 5)}, "degenerate"),
])
def test_invalid_scenarios_rejected(kw, msg):
    kw.setdefault("area", (0, 0, 10, 10))
    with pytest.raises(ValueError, match=msg):
        Scenario(**kw)


def test_seeded_streams_are_reproducible_and_independent():
    a = SeededRng(7, (1, 2, 3)).generator().standard_normal(5)
    b = SeededRng(7, (1, 2, 3)).generator().standard_normal(5)
    c = SeededRng(7, (1, 2, 4)).generator().standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert SeededRng(7, (1,)).child(2, 3) == SeededRng(7, (1, 2, 3))


def test_grid_layout_cell_centers():
    g = grid_layout((0, 0, 10, 10), 2.5)
    assert g.shape == (16, 2)
    assert set(np.unique(g[:, 0])) == {1.25, 3.75, 6.25, 8.75}


def test_grid_scenario():
    sc = grid_scenario()
    assert sc.n_aps == 16
    assert sc.area == (0.0, 0.0, 10.0, 10.0)


def test_power_override(sc):
    sp = sc.with_power_dbm(10.0)
    assert sp.tx_power == pytest.approx(1e-2)
    assert np.array_equal(sp.ap_positions, sc.ap_positions)


def test_config_round_trip(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text(
        "seed = 5\n"
        "[scenario]\n"
        "area = [0.0, 0.0, 8.0, 6.0]\n"
        "tx_power_dbm = 0.0\n"
        "phase_offset_deg = 20.0\n"
        "carrier_freq_hz = 2.4e9\n"
        "[scenario.aps]\n"
        "positions = [[1.0, 1.0], [7.0, 1.0], [4.0, 5.0]]\n")
    cfg = load_config(path)
    sc = scenario_from_config(cfg)
    assert sc.area == (0.0, 0.0, 8.0, 6.0)
    assert sc.n_aps == 3
    assert sc.tx_power == pytest.approx(1e-3)
    assert sc.phase_offset == pytest.approx(math.radians(20))
    assert sc.wavelength == pytest.approx(299792458.0 / 2.4e9)


def test_config_random_layout_uses_seed():
    cfg = {"scenario": {"aps": {"count": 6}, "area": [0, 0, 5, 5]}}
    a = scenario_from_config(cfg, seed=2)
    b = scenario_from_config(cfg, seed=2)
    c = scenario_from_config(cfg, seed=3)
    assert a.n_aps == 6
    assert np.array_equal(a.ap_positions, b.ap_positions)
    assert not np.array_equal(a.ap_positions, c.ap_positions)
