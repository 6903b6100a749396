from __future__ import annotations

import json

import pytest

from usvlab.config import (bundled_configs, canonical_json, config_digest, parse_config, parse_config_dict,
                           scenario_to_dict)
from usvlab.errors import ParseError, ValidationError


def _minimal(**extra):
    raw = {"agents": [{"offset": [0, 0], "pose": [1, 2, 0.5]}, {"offset": [-2, -2], "pose": [0, 0, 0]}]}
    raw.update(extra)
    return raw


def test_bundled_nominal_scenario(nominal):
    fc = nominal.formation
    assert [p.as_array().tolist() for p in fc.params] == [[1.012, 1.982, 0.354, 3.436, 18.99, 0.864]] * 4
    assert fc.offsets == ((0, 0), (-2, -2), (4, 0), (-2, -2))
    assert {(g.kx, g.ktheta, g.kdx, g.komega) for g in fc.gains} == {(0.2, 0.2, 10.0, 10.0)}
    assert [tuple(q) for q in fc.initial_poses] == [
        (1.46, 0.45, 1.33), (-3.45, 2.25, 1.02), (-5.63, -4.94, -0.18), (-1.17, -5.23, -0.78)]
    assert fc.topology.parent == (0, 1, 2, 3)
    assert nominal.sim.noise_power == 0.0
    assert nominal.montecarlo_sim().noise_power == 0.1
    assert nominal.montecarlo_sim().noise_sample_time == 0.01
    assert nominal.montecarlo.n_runs == 100


def test_bundled_names():
    assert {"paper_nominal", "exact_formation", "single_pair"} <= set(bundled_configs())


def test_missing_pose_starts_in_formation(exact):
    poses = [tuple(q) for q in exact.formation.initial_poses]
    assert poses == [(0, 0, 0), (-2, -2, 0), (2, -2, 0), (0, -4, 0)]


def test_defaults_filled():
    s = parse_config_dict(_minimal())
    assert s.formation.topology.parent == (0, 1)
    assert s.sim.dt == 1e-3 and s.sim.t_end == 150.0
    assert s.sim.noise_power == 0.0
    assert s.montecarlo_noise is None


@pytest.mark.parametrize("mutate, field", [
    (lambda r: r.update(topology=[0, 2]), "topology[1]"),
    (lambda r: r.update(gains={"kx": 0}), "gains.kx"),
    (lambda r: r["agents"][1].update(gains={"komega": -1}), "agents[1].gains.komega"),
    (lambda r: r.update(simulation={"dt": 0.02}), "simulation.dt"),
    (lambda r: r.update(simulation={"dt": 0.003}), "noise.sample_time"),
    (lambda r: r.update(bogus=1), "bogus"),
    (lambda r: r["agents"][0].update(colour="red"), "agents[0].colour"),
    (lambda r: r.update(vessel={"m11": -1.0}), "vessel.m11"),
    (lambda r: r["agents"][0].update(pose=[1, 2]), "agents[0].pose"),
    (lambda r: r.update(agents=[]), "agents"),
    (lambda r: r.update(noise={"power": "loud"}), "noise.power"),
    (lambda r: r.update(analysis={"window": 200}), "analysis.horizon"),
])
def test_validation_errors(mutate, field):
    raw = _minimal()
    mutate(raw)
    with pytest.raises(ValidationError) as info:
        parse_config_dict(raw)
    assert info.value.field == field


def test_topology_rule_in_message():
    raw = {"topology": [0, 2, 1], "agents": [{"offset": [0, 0]}] * 3}
    with pytest.raises(ValidationError) as info:
        parse_config_dict(raw)
    assert info.value.field == "topology[1]"
    assert "lower index" in info.value.constraint


def test_parse_error_has_position(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "agents": [\n    {"offset": [0, 0],}\n  ]\n}\n')
    with pytest.raises(ParseError) as info:
        parse_config(bad)
    assert info.value.line == 3


def test_unknown_file():
    with pytest.raises(FileNotFoundError):
        parse_config("no_such_scenario")


@pytest.mark.parametrize("name", ["paper_nominal", "exact_formation", "single_pair"])
def test_round_trip_bundled(name):
    s = parse_config(name)
    again = parse_config_dict(json.loads(canonical_json(s)))
    assert again == s
    assert config_digest(again) == config_digest(s)


def test_round_trip_with_overrides(tmp_path):
    raw = _minimal(noise={"power": 0.05, "sample_time": 0.02},
                   montecarlo={"runs": 3, "seed": 5, "noise": {"power": 0.1, "sample_time": 0.01}})
    raw["agents"][0]["plant_params"] = {"m11": 2.0}
    raw["agents"][1]["gains"] = {"kx": 0.05}
    s = parse_config_dict(raw)
    assert s.formation.plant[0].m11 == 2.0 and s.formation.plant[1].m11 == 1.012
    assert s.formation.gains[1].kx == 0.05 and s.formation.gains[0].kx == 0.2
    path = tmp_path / "c.json"
    path.write_text(canonical_json(s))
    assert parse_config(path) == s
    assert scenario_to_dict(parse_config(path)) == scenario_to_dict(s)
