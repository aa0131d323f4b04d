import math

import pytest

from webweaver.config import PRESETS, ScenarioConfig, evenly_spaced_fractions
from webweaver.engine import ConfigError, run_trajectory
from webweaver.graphs import is_connected


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_toml_round_trip(name):
    cfg = ScenarioConfig.preset(name)
    again = ScenarioConfig.from_toml(cfg.to_toml())
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_materializes(name):
    cfg = ScenarioConfig.preset(name).quick()
    for point in cfg.sweep_points()[:2]:
        sim = cfg.at_point(point).sim_config(0)
        assert is_connected(sim.network.graph)


def test_load_from_file(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text('[base]\nkind = "complete"\nn = 3\n\n[run]\ntrajectories = 2\n')
    cfg = ScenarioConfig.load(path)
    assert cfg.base == {"kind": "complete", "n": 3}
    assert cfg.run["trajectories"] == 2 and cfg.run["seed"] == 0
    assert cfg.sim_config(0).base.n == 3


def test_kind_change_resets_section():
    cfg = ScenarioConfig.from_dict({"network": {"kind": "complete", "n": 5}})
    assert "m" not in cfg.network


def test_with_value_and_sweep_grid():
    cfg = ScenarioConfig.preset("liveness")
    pts = cfg.sweep_points()
    assert len(pts) == 15
    assert pts[0] == {"network.m": 1, "routing.max_connections": 1}
    sim = cfg.at_point(pts[-1]).sim_config(0)
    assert sim.network.max_connections == 10
    assert ScenarioConfig.preset("completeness").with_value("base.n", 4).sim_config(0).base.n == 4


def test_adversary_fraction_override():
    cfg = ScenarioConfig.preset("censorship").with_value("adversary_fraction", 0.3)
    fr = {a["policy"]: a["fraction"] for a in cfg.agents}
    assert fr == pytest.approx({"honest": 0.7, "censor": 0.3})
    static = ScenarioConfig.from_dict({}).with_value("adversary_fraction", 0.25)
    assert sorted(a["policy"] for a in static.agents) == ["censor", "static"]


def test_evenly_spaced_fractions():
    assert evenly_spaced_fractions(1) == [0.5]
    assert evenly_spaced_fractions(4) == [0.2, 0.4, 0.6, 0.8]
    assert len(evenly_spaced_fractions(5)) == 5
    with pytest.raises(ConfigError):
        evenly_spaced_fractions(0)


@pytest.mark.parametrize("data", [
    {"bogus": {}},
    {"run": {"trajectories": 0}},
    {"agents": []},
    {"agents": [{"policy": "static", "fraction": 0.5}]},
    {"agents": [{"policy": "sneaky", "fraction": 1.0}]},
    {"agents": [{"policy": "honest", "fraction": 1.0, "colour": 1}]},
    {"latency": {"kind": "empirical", "file": "/nonexistent/lat.txt"}},
    {"sweep": {"network.m": []}},
    {"sweep": {"nowhere": [1]}},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict(data)


def test_bad_toml_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ScenarioConfig.from_toml("[run\n")
    with pytest.raises(ConfigError):
        ScenarioConfig.load(tmp_path / "missing.toml")
    with pytest.raises(ConfigError):
        ScenarioConfig.preset("nope")
    with pytest.raises(ConfigError):
        ScenarioConfig.preset("censorship").with_value("adversary_fraction", 1.5)


def test_graph_seed_depends_on_trajectory():
    cfg = ScenarioConfig.preset("censorship")
    a, b = cfg.sim_config(0), cfg.sim_config(1)
    assert a.network.graph.edges() != b.network.graph.edges()
    assert cfg.sim_config(0).network.graph.edges() == a.network.graph.edges()


def test_horizon_zero_means_unbounded():
    cfg = ScenarioConfig.from_dict({"network": {"kind": "complete", "n": 3}, "run": {"target_blocks": 10}})
    assert math.isinf(cfg.sim_config(0).horizon)
    log = run_trajectory(cfg.sim_config(0), 0)
    assert log.header["config"]["target_blocks"] == 10
