"""Scenario parsing/validation, artifact writing, plotting, and the CLI."""

import json
import subprocess

import numpy as np
import pytest

from formlab import cli, output, plots, scenario, sim
from formlab.errors import FormlabError, ScenarioError


def base_doc():
    """A minimal valid planar scenario, mutated per test."""
    return {
        "name": "tiny",
        "dimension": 2,
        "axis": [0, 0, 1],
        "agents": [
            {"id": 1, "role": "follower", "nominal": [0.5, 0.5, 0], "neighbors": [2, 4, 5]},
            {"id": 2, "role": "follower", "nominal": [0.5, -0.5, 0], "neighbors": [3, 4, 5]},
            {"id": 3, "role": "follower", "nominal": [0.0, 0.0, 0], "neighbors": [1, 4, 5]},
            {"id": 4, "role": "leader", "nominal": [-1.0, 1.0, 0], "neighbors": []},
            {"id": 5, "role": "leader", "nominal": [-1.0, -1.0, 0], "neighbors": []},
        ],
        "segments": [{"t_start": 0, "t_end": 5}],
    }


def spatial_doc():
    doc = base_doc()
    doc["dimension"] = 3
    root3 = 1.7320508075688772
    nominals = [
        [0.05, 0, 1], [-0.05, 0, -1], [1, root3, 0.05], [1, -root3, -0.05], [-2, 0, 0],
    ]
    for a, nom in zip(doc["agents"], nominals):
        a["nominal"] = nom
    return doc


def parse(doc):
    return scenario.parse_scenario(json.dumps(doc))


def problem_paths(excinfo):
    return [p for p, _ in excinfo.value.problems]


class TestParseValid:
    def test_minimal_roundtrip(self):
        sc = parse(base_doc())
        again = scenario.parse_scenario(scenario.emit_scenario(sc))
        assert again == sc

    def test_packaged_fixtures_parse_and_roundtrip(self):
        names = scenario.packaged_scenarios()
        assert "wedge_2d.json" in names and "wedge_3d.json" in names
        for name in names:
            sc = scenario.load_packaged(name)
            assert scenario.parse_scenario(scenario.emit_scenario(sc)) == sc
            form = scenario.build_formation(sc)
            assert form.n == sc.n_agents
            sched = scenario.build_schedule(sc)
            assert sched.t_end > sched.t_start

    def test_omitted_tracks_hold_previous_end(self):
        doc = base_doc()
        doc["segments"] = [
            {"t_start": 0, "t_end": 5,
             "translation": {"kind": "linear", "from": [0, 0, 0], "to": [2, 0, 0]}},
            {"t_start": 5, "t_end": 9},
        ]
        sc = parse(doc)
        held = sc.segments[1].translation
        assert held.kind == "constant"
        assert held.start == (2.0, 0.0, 0.0) and held.end == (2.0, 0.0, 0.0)
        assert sc.segments[1].scale.start == 1.0
        assert sc.segments[1].angle.start == 0.0

    def test_first_segment_defaults_to_identity(self):
        sc = parse(base_doc())
        seg = sc.segments[0]
        assert seg.translation.start == (0.0, 0.0, 0.0)
        assert seg.scale.start == 1.0 and seg.angle.start == 0.0

    def test_initial_positions_none_when_unset(self):
        assert scenario.initial_positions(parse(base_doc())) is None

    def test_initial_positions_fall_back_to_nominal(self):
        doc = base_doc()
        doc["agents"][0]["initial"] = [0.9, 0.9, 0]
        got = scenario.initial_positions(parse(doc))
        assert got.shape == (5, 3)
        assert tuple(got[0]) == (0.9, 0.9, 0.0)
        assert tuple(got[1]) == tuple(doc["agents"][1]["nominal"])

    def test_extra_leaders_warn_but_parse(self):
        doc = spatial_doc()
        doc["agents"][2] = {
            "id": 3, "role": "leader", "nominal": [1, 1.7320508075688772, 0.05],
            "neighbors": [],
        }
        doc["agents"][0]["neighbors"] = [2, 3, 4, 5]
        doc["agents"][1]["neighbors"] = [1, 3, 4, 5]
        with pytest.warns(UserWarning, match="3 leaders"):
            sc = parse(doc)
        assert sc.n_followers == 2

    def test_schedule_axis_resolution_across_switches(self):
        doc = spatial_doc()
        doc["segments"] = [
            {"t_start": 0, "t_end": 5},
            {"t_start": 5, "t_end": 10,
             "angle": {"kind": "linear", "from": 0, "to": 0.5}},
        ]
        doc["events"] = [{"type": "axis_switch", "t": 5, "new_axis": [1, 0, 0]}]
        sched = scenario.build_schedule(parse(doc))
        assert np.allclose(sched.segments[0].axis.vec, [0, 0, 1])
        assert np.allclose(sched.segments[1].axis.vec, [1, 0, 0])


class TestParseErrors:
    def test_invalid_json(self):
        with pytest.raises(ScenarioError) as exc:
            scenario.parse_scenario("{not json")
        assert problem_paths(exc) == ["$"]

    def test_many_problems_reported_at_once(self):
        with pytest.raises(ScenarioError) as exc:
            scenario.parse_scenario('{"name":"x","dimension":4,"agents":[]}')
        got = problem_paths(exc)
        for path in ("dimension", "axis", "agents", "segments"):
            assert path in got
        assert str(exc.value).startswith("scenario validation failed:")

    def test_unknown_keys_rejected(self):
        doc = base_doc()
        doc["grav"] = 9.8
        doc["agents"][0]["mass"] = 1.0
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert ("grav", "unknown field") in exc.value.problems
        assert ("agents[0].mass", "unknown field") in exc.value.problems

    def test_duplicate_and_noncontiguous_ids(self):
        doc = base_doc()
        doc["agents"][1]["id"] = 1
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any("unique" in m for _, m in exc.value.problems)
        doc = base_doc()
        doc["agents"][4]["id"] = 9
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any("1..5" in m for _, m in exc.value.problems)

    def test_followers_must_precede_leaders(self):
        doc = base_doc()
        doc["agents"][0]["role"] = "leader"
        doc["agents"][3] = {
            "id": 4, "role": "follower", "nominal": [-1, 1, 0], "neighbors": [2, 3, 5],
        }
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any("low ids" in m for _, m in exc.value.problems)

    def test_neighbor_validation(self):
        doc = base_doc()
        doc["agents"][0]["neighbors"] = [1, 9, 2, 2]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        msgs = [m for p, m in exc.value.problems if p == "agents[0].neighbors"]
        assert any("itself" in m for m in msgs)
        assert any("9 does not exist" in m for m in msgs)
        assert any("repeats" in m for m in msgs)

    def test_follower_needs_two_neighbors(self):
        doc = base_doc()
        doc["agents"][0]["neighbors"] = [4]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any("at least 2 neighbors" in m for _, m in exc.value.problems)

    def test_planar_needs_zero_z(self):
        doc = base_doc()
        doc["agents"][0]["nominal"] = [0.5, 0.5, 0.3]
        doc["agents"][1]["initial"] = [0.5, -0.5, -0.1]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        got = problem_paths(exc)
        assert "agents[0].nominal" in got and "agents[1].initial" in got

    def test_planar_axis_must_be_plus_z(self):
        doc = base_doc()
        doc["axis"] = [0, 1, 0]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any(p == "axis" and "+z" in m for p, m in exc.value.problems)

    def test_planar_rejects_axis_switch(self):
        doc = base_doc()
        doc["segments"] = [
            {"t_start": 0, "t_end": 5}, {"t_start": 5, "t_end": 10},
        ]
        doc["events"] = [{"type": "axis_switch", "t": 5, "new_axis": [1, 0, 0]}]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any("planar" in m for _, m in exc.value.problems)

    def test_unknown_event_type(self):
        doc = base_doc()
        doc["events"] = [{"type": "teleport", "t": 1}]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert "events[0].type" in problem_paths(exc)

    def test_join_window_and_neighbors(self):
        doc = base_doc()
        doc["events"] = [
            {"type": "agent_join", "t_start": 3, "t_join": 2,
             "initial": [1, 1, 0], "offset": [0, 0, 0], "neighbors": [1, 2]},
            {"type": "agent_join", "t_start": 1, "t_join": 2,
             "initial": [1, 1, 0], "offset": [0.2, 0, 0], "neighbors": [1, 9]},
        ]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any(p == "events[0]" and "t_start < t_join" in m
                   for p, m in exc.value.problems)
        assert any(p == "events[1].neighbors" and "[9]" in m
                   for p, m in exc.value.problems)

    def test_scale_must_stay_positive(self):
        doc = base_doc()
        doc["segments"] = [
            {"t_start": 0, "t_end": 5,
             "scale": {"kind": "linear", "from": 1, "to": -0.2}},
        ]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert "segments[0].scale" in problem_paths(exc)

    def test_track_kind_and_field_mismatch(self):
        doc = base_doc()
        doc["segments"] = [
            {"t_start": 0, "t_end": 5,
             "scale": {"kind": "constant", "from": 1, "to": 2},
             "angle": {"kind": "wobble", "value": 1}},
        ]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        got = problem_paths(exc)
        assert "segments[0].scale" in got
        assert "segments[0].angle.kind" in got

    def test_discontinuous_schedule_reported(self):
        doc = base_doc()
        doc["segments"] = [
            {"t_start": 0, "t_end": 5,
             "translation": {"kind": "linear", "from": [0, 0, 0], "to": [1, 0, 0]}},
            {"t_start": 5, "t_end": 9,
             "translation": {"kind": "linear", "from": [3, 0, 0], "to": [4, 0, 0]}},
        ]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any(p == "schedule" and "discontinuous" in m
                   for p, m in exc.value.problems)

    def test_not_two_rooted_reported(self):
        doc = base_doc()
        # Funnel all follower sensing through agent 3 so deleting it
        # disconnects the others from the leader pair.
        doc["agents"][0]["neighbors"] = [2, 3]
        doc["agents"][1]["neighbors"] = [1, 3]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any("2-rooted" in m for _, m in exc.value.problems)

    def test_leader_offsets_parallel_to_axis_reported(self):
        doc = spatial_doc()
        doc["agents"][3]["nominal"] = [0, 0, 2.0]
        doc["agents"][4]["nominal"] = [0, 0, -2.0]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        assert any(p == "axis" and "parallel" in m for p, m in exc.value.problems)

    def test_obstacle_validation(self):
        doc = base_doc()
        doc["obstacles"] = [
            {"kind": "box", "min": [0, 0], "max": [-1, 1]},
            {"kind": "blob"},
            {"kind": "polygon", "vertices": [[0, 0], [1, 0]]},
        ]
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        got = problem_paths(exc)
        assert "obstacles[0]" in got
        assert "obstacles[1].kind" in got
        assert "obstacles[2].vertices" in got

    def test_defaults_validation(self):
        doc = base_doc()
        doc["defaults"] = {"dt": -1, "mode": "magic", "stride": 0}
        with pytest.raises(ScenarioError) as exc:
            parse(doc)
        got = problem_paths(exc)
        assert {"defaults.dt", "defaults.mode", "defaults.stride"} <= set(got)


def run_fixture(tmp_path, name="wedge_2d", extra=()):
    out = tmp_path / "out"
    rc = cli.main(["run", name, "--out", str(out), "--dt", "0.01",
                   "--stride", "50", *extra])
    assert rc == 0
    return out


class TestArtifacts:
    def test_csv_headers_and_shape(self, tmp_path):
        out = run_fixture(tmp_path)
        traj = (out / "trajectory.csv").read_text()
        errs = (out / "errors.csv").read_text()
        assert traj.splitlines()[0] == "t,agent,role,x,y,z,vx,vy,vz"
        assert errs.splitlines()[0] == "t,agent,ex,ey,ez"
        assert traj.endswith("\n") and "\r" not in traj
        row = traj.splitlines()[1].split(",")
        assert len(row) == 9 and row[1] == "1" and row[2] == "follower"

    def test_manifest_contents(self, tmp_path):
        out = run_fixture(tmp_path)
        man = json.loads((out / "manifest.json").read_text())
        for key in ("version", "seed", "mode", "integrator", "alpha", "dt",
                    "stride", "backend", "dimension", "steps", "samples",
                    "frames", "events"):
            assert key in man
        assert man["mode"] == "implicit" and man["dt"] == 0.01
        assert man["frames"][0]["rcond"] > 1e-12
        assert not any("time" in k for k in man if k != "events")

    def test_byte_identical_reruns(self, tmp_path):
        out1 = run_fixture(tmp_path / "a")
        out2 = run_fixture(tmp_path / "b")
        for name in ("trajectory.csv", "errors.csv", "manifest.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_flag_overrides_reach_manifest(self, tmp_path):
        out = tmp_path / "out"
        rc = cli.main(["run", "wedge_2d", "--out", str(out), "--dt", "0.02",
                       "--alpha", "2.0", "--seed", "3", "--integrator", "euler",
                       "--stride", "100"])
        assert rc == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["dt"] == 0.02 and man["alpha"] == 2.0
        assert man["seed"] == 3 and man["integrator"] == "euler"

    def test_join_roles_appear_in_trajectory(self, tmp_path):
        out = run_fixture(tmp_path, name="wedge_3d")
        roles = {line.split(",")[2] for line in
                 (out / "trajectory.csv").read_text().splitlines()[1:]}
        assert roles == {"follower", "leader", "joining"}


class TestPlots:
    def test_run_with_plot_flag(self, tmp_path):
        out = run_fixture(tmp_path, extra=("--plot",))
        for name in ("trajectory.svg", "errors_x.svg", "errors_y.svg", "errors_z.svg"):
            body = (out / name).read_bytes()
            assert body.startswith(b"<?xml") and len(body) > 1000

    def test_plot_command_spatial(self, tmp_path):
        out = run_fixture(tmp_path, name="wedge_3d")
        figs = tmp_path / "figs"
        rc = cli.main(["plot", "--traj", str(out / "trajectory.csv"),
                       "--err", str(out / "errors.csv"), "--out", str(figs),
                       "--scenario", "wedge_3d"])
        assert rc == 0
        assert (figs / "trajectory.svg").exists()

    def test_empty_log_is_an_error(self, tmp_path):
        traj = tmp_path / "t.csv"
        err = tmp_path / "e.csv"
        traj.write_text("t,agent,role,x,y,z,vx,vy,vz\n")
        err.write_text("t,agent,ex,ey,ez\n")
        with pytest.raises(FormlabError, match="no data rows"):
            plots.plot_run(traj, err, tmp_path / "figs")

    def test_wrong_header_is_an_error(self, tmp_path):
        traj = tmp_path / "t.csv"
        traj.write_text("time,id,x\n1,2,3\n")
        with pytest.raises(FormlabError, match="header"):
            plots.read_trajectory_csv(traj)


class TestCli:
    def test_validate_ok(self, capsys):
        assert cli.main(["validate", "wedge_2d"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("OK wedge_2d:") and "75 s" in out

    def test_validate_bad_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"name":"x","dimension":2}')
        assert cli.main(["validate", str(bad)]) == 1
        assert "scenario validation failed" in capsys.readouterr().err

    def test_missing_scenario(self, capsys):
        assert cli.main(["validate", "no_such_thing"]) == 1
        assert "no such scenario" in capsys.readouterr().err

    def test_run_rejects_bad_dt(self, tmp_path, capsys):
        rc = cli.main(["run", "wedge_2d", "--out", str(tmp_path), "--dt", "-0.5"])
        assert rc == 1

    def test_console_script_installed(self):
        proc = subprocess.run(["formlab", "validate", "wedge_3d"],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.startswith("OK wedge_3d")


class TestOutputFormatting:
    def test_seventeen_digit_floats(self, tmp_path):
        sc = scenario.load_packaged("wedge_2d.json")
        res = sim.simulate(
            scenario.build_formation(sc), sc.axis, scenario.build_schedule(sc),
            initial_positions=scenario.initial_positions(sc), dt=0.05, stride=200,
        )
        path = tmp_path / "traj.csv"
        output.write_trajectory_csv(res, path)
        for line in path.read_text().splitlines()[1:]:
            x = line.split(",")[3]
            assert float(x) == float(format(float(x), ".17g"))
