import json
from pathlib import Path

import numpy as np
import pytest

from nonlocalflow import AuditError, solve_direct
from nonlocalflow.cli import (
    RunConfig,
    ScenarioParseError,
    bundled_scenarios,
    emit_plotdata,
    load_scenario,
    main,
    run,
    save_scenario,
    scenario_from_config,
    _load_raw,
)


def test_bundled_list_contains_standard_scenarios():
    names = bundled_scenarios()
    assert "sedimentation-1d" in names
    assert "pedestrian-2d" in names


def test_bundled_sedimentation_loads():
    scn = load_scenario("sedimentation-1d")
    assert scn.initial.k == 1
    assert scn.initial.dim == 1


def test_unknown_kernel_name_is_reported():
    raw = _load_raw("sedimentation-1d")
    raw["model"]["kernel"]["name"] = "boxcar"
    with pytest.raises(ScenarioParseError, match="model.kernel"):
        scenario_from_config(raw)


def test_missing_field_is_reported():
    raw = _load_raw("sedimentation-1d")
    del raw["species"][0]["support"]
    with pytest.raises(ScenarioParseError, match="support"):
        scenario_from_config(raw)


def test_unknown_scenario_name():
    with pytest.raises(ScenarioParseError, match="not found"):
        load_scenario("no-such-scenario")


def test_overrides_change_discretization():
    scn = load_scenario("sedimentation-1d", overrides={"n": 17, "dt": 0.01, "horizon": 0.2})
    assert len(scn.initial.species[0]) == 17
    assert scn.step.dt == 0.01
    assert scn.horizon == 0.2


def test_bad_override_rejected():
    with pytest.raises(ScenarioParseError, match="override"):
        RunConfig("sedimentation-1d", Path("/tmp/x"), {"bogus": 1})


def test_round_trip_identical_scenario(tmp_path):
    a = load_scenario("sedimentation-1d", audit=False)
    saved = save_scenario(a, tmp_path / "copy.json")
    b = load_scenario(str(saved), audit=False)
    assert a.name == b.name
    assert a.horizon == b.horizon
    assert a.step == b.step
    assert a.mode == b.mode
    assert a.picard == b.picard
    assert a.seed == b.seed
    assert a.config == b.config
    assert np.array_equal(a.initial.species[0].positions, b.initial.species[0].positions)
    assert np.array_equal(a.initial.species[0].weights, b.initial.species[0].weights)


def test_run_zero_field_outputs(tmp_path):
    status = run(RunConfig("zero-field-1d", tmp_path))
    assert status == 0
    traj = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert traj[0] == "t,species,particle,x_1,weight"
    # static trajectory: first and last snapshot rows carry identical positions
    first = traj[1].split(",")
    last = traj[-1].split(",")
    assert first[3] == "-1"
    assert last[3] == "1.25"
    reports = (tmp_path / "reports.csv").read_text().splitlines()
    assert any("mass-conservation" in line and "true" in line for line in reports[1:])


def test_run_determinism_byte_identical(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run(RunConfig("sedimentation-1d", out_a)) == 0
    assert run(RunConfig("sedimentation-1d", out_b)) == 0
    for rel in ("trajectory.csv", "reports.csv", "plot/particle-cloud.svg",
                "plot/w1-curve.csv"):
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel


EXPANDING_SCENARIO = {
    "schema": 1,
    "name": "expanding-1d",
    "horizon": 0.5,
    "dt": 0.01,
    "model": {"type": "linear-local", "alpha": 1.0, "domain_radius": 8.0, "dim": 1},
    "audit_radius": 8.0,
    "species": [
        {"type": "grid-1d", "profile": "uniform", "support": [-1.0, 1.0],
         "resolution": 32, "particles": 12, "scheme": "quantile-1d", "mass": 1.0}
    ],
    "checks": [{"type": "stability-initial", "pairs": 2, "eps": 0.05, "slack": 1.05}],
}


def test_broken_k_override_fails_stability(tmp_path):
    # distances grow like e^t here, so the e^{0*t} bound must be violated
    path = tmp_path / "expanding.json"
    path.write_text(json.dumps(EXPANDING_SCENARIO))
    good = run(RunConfig(str(path), tmp_path / "good"))
    assert good == 0
    status = run(RunConfig(str(path), tmp_path / "broken", {"k_override": 0.0}))
    assert status != 0
    lines = (tmp_path / "broken" / "reports.csv").read_text().splitlines()
    assert any("false" in line for line in lines[1:])


def test_emit_plotdata_kinds(tmp_path):
    scn = load_scenario("sedimentation-1d", audit=False)
    rec = solve_direct(scn)

    files = emit_plotdata(rec, "particle-cloud", tmp_path)
    cloud = (tmp_path / "plot/particle-cloud.csv").read_text().splitlines()
    frames = {line.split(",")[0] for line in cloud[1:]}
    assert len(frames) == len(rec.times)

    emit_plotdata(rec, "w1-curve", tmp_path, other=rec)
    curve = (tmp_path / "plot/w1-curve.csv").read_text().splitlines()
    values = [float(line.split(",")[1]) for line in curve[1:]]
    assert max(values) <= 1e-15  # identical pair: flat zero curve

    with pytest.raises(ValueError, match="unknown plot kind"):
        emit_plotdata(rec, "hologram", tmp_path)


def test_emit_picard_decay_monotone(tmp_path):
    scn = load_scenario("sedimentation-1d", overrides={"mode": "picard"}, audit=False)
    from nonlocalflow import solve_picard

    rec = solve_picard(scn)
    emit_plotdata(rec, "picard-decay", tmp_path)
    rows = (tmp_path / "plot/picard-decay.csv").read_text().splitlines()[1:]
    by_window = {}
    for line in rows:
        w, it, d = line.split(",")
        by_window.setdefault(w, []).append(float(d))
    for dists in by_window.values():
        assert all(b < a for a, b in zip(dists[1:], dists[2:]))  # decreasing after iteration 1


def test_density_profile_emission(tmp_path):
    scn = load_scenario("linear-local-compressive-1d", audit=False)
    rec = solve_direct(scn)
    emit_plotdata(rec, "density-profile", tmp_path)
    rows = (tmp_path / "plot/density-profile.csv").read_text().splitlines()
    assert rows[0] == "t,species,particle,x_1,density"
    assert len(rows) > 1


def test_cli_main_verbs(tmp_path):
    assert main(["scenarios"]) == 0
    assert main(["audit", "sedimentation-1d"]) == 0
    assert main(["audit", "no-such"]) == 1

    out = tmp_path / "run"
    assert main(["run", "zero-field-1d", "--out", str(out), "--emit", "trajectories"]) == 0
    assert (out / "trajectory.csv").exists()


def test_cli_w1_verb(tmp_path, capsys):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("x_1,weight\n0.0,1.0\n")
    b.write_text("x_1,weight\n3.0,1.0\n")
    assert main(["w1", str(a), str(b)]) == 0
    assert float(capsys.readouterr().out.strip()) == pytest.approx(3.0)


def test_audit_error_carries_witness():
    raw = _load_raw("predator-decoupled-1d")
    raw["audit_radius"] = 30.0  # spring sup bound only certified on radius 3
    with pytest.raises(AuditError, match="sup audit"):
        scenario_from_config(raw)
