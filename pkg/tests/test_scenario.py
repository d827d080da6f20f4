"""Scenario schema tests: defaults, strictness, round-trips, generation."""

import json

import pytest

from instinctsim.scenario import (
    Scenario,
    ScenarioError,
    load_scenario,
    parse_scenario,
    random_scenario,
    save_scenario,
)
from instinctsim.world import clearance

MINIMAL = {
    "world": {"bounds": {"min": [-4, -4], "max": [4, 4]}},
    "tasks": [{"issue_tick": 0, "goal": {"kind": "GOTO", "x": 3.0, "y": 2.0}}],
}


class TestParsing:
    def test_minimal_gets_all_defaults(self):
        sc = parse_scenario(dict(MINIMAL))
        assert sc.robot.radius == 0.15
        assert sc.instinct.d_min == 0.2
        assert sc.lidar.beams == 36
        assert sc.agent.backend == "rule"
        assert sc.channels.command_latency == 2
        assert sc.ticks == 6000
        assert len(sc.tasks) == 1

    def test_unknown_key_rejected_by_name(self):
        raw = dict(MINIMAL)
        raw["robo_speed"] = 3.0
        with pytest.raises(ScenarioError, match="robo_speed"):
            parse_scenario(raw)

    def test_unknown_nested_key_rejected(self):
        raw = json.loads(json.dumps(MINIMAL))
        raw["robot"] = {"radius": 0.2, "wheel_count": 4}
        with pytest.raises(ScenarioError, match="wheel_count"):
            parse_scenario(raw)

    def test_missing_world_rejected(self):
        with pytest.raises(ScenarioError, match="world"):
            parse_scenario({"tasks": []})

    def test_missing_bounds_rejected(self):
        with pytest.raises(ScenarioError, match="bounds"):
            parse_scenario({"world": {"circles": []}})

    def test_invariant_violations_named(self):
        raw = json.loads(json.dumps(MINIMAL))
        raw["world"]["circles"] = [{"center": [0, 0], "radius": -1.0}]
        with pytest.raises(ScenarioError, match="radius"):
            parse_scenario(raw)
        raw = json.loads(json.dumps(MINIMAL))
        raw["instinct"] = {"d_min": 0.4, "d_stop": 0.3}
        with pytest.raises(ScenarioError, match="d_min < d_stop"):
            parse_scenario(raw)
        raw = json.loads(json.dumps(MINIMAL))
        raw["start"] = {"x": 99.0, "y": 0.0}
        with pytest.raises(ScenarioError, match="start"):
            parse_scenario(raw)

    def test_bad_goal_kind(self):
        raw = json.loads(json.dumps(MINIMAL))
        raw["tasks"] = [{"issue_tick": 0, "goal": {"kind": "TELEPORT"}}]
        with pytest.raises(ScenarioError, match="TELEPORT"):
            parse_scenario(raw)

    def test_backend_validated(self):
        raw = json.loads(json.dumps(MINIMAL))
        raw["agent"] = {"backend": "psychic"}
        with pytest.raises(ScenarioError, match="psychic"):
            parse_scenario(raw)


class TestRoundTrip:
    def test_load_save_load_equals(self, tmp_path):
        raw = json.loads(json.dumps(MINIMAL))
        raw["world"]["circles"] = [{"center": [1.0, 1.0], "radius": 0.4}]
        raw["world"]["rects"] = [{"min": [-2.0, -2.0], "max": [-1.0, -1.0]}]
        raw["agent"] = {"backend": "hallucinate",
                        "hallucination_probability": 0.3}
        raw["seed"] = 7
        path = tmp_path / "s.json"
        path.write_text(json.dumps(raw))
        first = load_scenario(str(path))
        out = tmp_path / "roundtrip.json"
        save_scenario(first, str(out))
        second = load_scenario(str(out))
        assert first == second

    def test_unreadable_path_is_scenario_error(self):
        with pytest.raises(ScenarioError, match="cannot read"):
            load_scenario("/nonexistent/path.json")

    def test_invalid_json_is_scenario_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ScenarioError, match="not valid JSON"):
            load_scenario(str(path))


class TestRandomScenario:
    def test_deterministic_per_seed(self):
        assert random_scenario(5) == random_scenario(5)
        assert random_scenario(5) != random_scenario(6)

    def test_contract_over_seeds(self):
        for seed in range(40):
            sc = random_scenario(seed)
            n = len(sc.world.circles) + len(sc.world.rects)
            assert 3 <= n <= 8
            assert clearance(sc.world, sc.start.x, sc.start.y) >= 0.5
            task = sc.tasks[0]
            assert clearance(sc.world, task.x, task.y) >= 0.5

    def test_round_trips_through_json(self, tmp_path):
        sc = random_scenario(11)
        path = tmp_path / "gen.json"
        save_scenario(sc, str(path))
        assert load_scenario(str(path)) == sc
