import math
from dataclasses import replace

import numpy as np
import pytest

from detumble.nmpc import NmpcConfig
from detumble.sim import (
    SERIES_COLUMNS,
    SUMMARY_COLUMNS,
    ConfigError,
    RunConfig,
    bundled_cases_dir,
    config_from_dict,
    emit_series,
    load_config,
    paper_cases,
    run_case,
    run_suite,
    series_csv,
)

from .conftest import CASE_OMEGA0_DPS

SHORT = RunConfig(truth_model="dipole", max_duration=120.0)


def test_shipped_cases_hold_table_values():
    cfgs = paper_cases()
    assert [(c.name, c.controller) for c in cfgs] == [(f"case{i}", k) for i in range(1, 5) for k in ("bdot", "nmpc")]
    for c in cfgs:
        assert c.omega0_dps == CASE_OMEGA0_DPS[c.name]
        assert (c.inertia.jx, c.inertia.jy, c.inertia.jz) == (0.02, 0.03, 0.04)
        assert c.orbit.semi_major_axis == 6691.6 and c.orbit.inclination == 96.7
        assert c.truth_model == "igrf" and c.max_duration == 9000.0 and c.threshold_dps == 0.10
        assert c.plant_step == 0.1 and c.control_period == 1.0
        assert c.nmpc.q == (1e4, 1e2, 50.0) and c.nmpc.r1 == c.nmpc.r2 == 0.1 and c.nmpc.stages == 10
        assert c.bdot.m_max == c.nmpc.m_max == 1.0


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"orbit": {"altitude_km": 400}})
    with pytest.raises(ConfigError):
        config_from_dict({"bdot": {"gain": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"controllers": ["pid"]})
    with pytest.raises(ConfigError):
        config_from_dict({"simulation": {"plant_step": 0.3}})
    with pytest.raises(ConfigError):
        config_from_dict({"colour": "red"})
    p = tmp_path / "x.yaml"
    p.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("name: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")


def test_config_defaults_to_file_stem(tmp_path):
    p = tmp_path / "spin.yaml"
    p.write_text("controller: bdot\nomega0_dps: [1, 0, 0]\nsimulation: {max_minutes: 2}\n")
    (cfg,) = load_config(p)
    assert cfg.name == "spin" and cfg.controller == "bdot" and cfg.max_duration == 120.0


def test_already_detumbled_stops_at_zero():
    r = run_case(replace(SHORT, controller="none", omega0_dps=(0.05, -0.05, 0.01)))
    assert r.detumbled and r.detumble_time == 0.0 and r.control_effort == 0.0
    assert len(r.series) == 1


def test_uncontrolled_run_records_every_plant_step():
    r = run_case(replace(SHORT, controller="none", omega0_dps=(1.0, 2.0, 3.0), max_duration=10.0))
    assert not r.detumbled and r.status == "ok"
    assert len(r.series) == 101
    assert np.allclose(np.diff(r.series[:, 0]), 0.1)
    assert np.all(np.isnan(r.series[:, -1]))


def test_termination_is_first_control_instant_below_threshold():
    cfg = replace(SHORT, omega0_dps=(0.02, 0.2, 0.15), max_duration=1200.0, nmpc=NmpcConfig(horizon_attitude="propagated"))
    r = run_case(cfg)
    assert r.detumbled
    s = r.series
    ctrl = s[np.isclose(np.mod(s[:, 0] + 1e-9, 1.0), 0.0, atol=1e-6)]
    below = np.all(np.abs(ctrl[:, 1:4]) < 0.10, axis=1)
    first = ctrl[np.argmax(below), 0]
    assert r.detumble_time == pytest.approx(first)
    assert s[-1, 0] == pytest.approx(r.detumble_time)
    assert np.all(np.abs(r.final_omega_dps) < 0.10)


def test_commands_respect_bound_and_effort_integral():
    for ctl in ("bdot", "nmpc"):
        r = run_case(replace(SHORT, controller=ctl, omega0_dps=CASE_OMEGA0_DPS["case1"]))
        m = r.series[:, 4]
        assert np.max(np.abs(m)) <= 1.0
        # each hold interval is recorded ten times
        assert r.control_effort == pytest.approx(np.sum(np.abs(m[1:])) * 0.1, rel=1e-9)


def test_series_csv_schema_and_determinism(tmp_path):
    cfg = replace(SHORT, controller="bdot", omega0_dps=(1.0, -2.0, 0.5), bdot=replace(SHORT.bdot, noise_std=2e-8), seed=5)
    a, b = run_case(cfg), run_case(cfg)
    text = series_csv(a)
    assert text.splitlines()[0] == ",".join(SERIES_COLUMNS)
    assert text.splitlines()[0] == "t_s,omega_x_dps,omega_y_dps,omega_z_dps,m_x_Am2,B_body_x_T,B_body_y_T,B_body_z_T,V_J,F_norm"
    assert text == series_csv(b)
    assert text.splitlines()[1].endswith(",")  # F_norm empty for B-dot
    first = np.array(text.splitlines()[1].split(",")[1:4], float)
    assert np.allclose(first, [1.0, -2.0, 0.5])  # degrees per second at the boundary
    paths = emit_series(a, tmp_path / "o", plot=True)
    assert [p.name for p in paths] == ["run_bdot.csv", "run_bdot_omega.svg", "run_bdot_mx.svg"]
    assert paths[1].read_text().startswith("<svg")


def test_nmpc_series_carries_residual_norm():
    r = run_case(replace(SHORT, controller="nmpc", omega0_dps=CASE_OMEGA0_DPS["case3"], max_duration=30.0))
    assert np.all(np.isfinite(r.series[:, -1])) and r.max_f_norm is not None
    assert r.telemetry["failed_steps"] == 0


def test_unwritable_output_raises(tmp_path):
    r = run_case(replace(SHORT, controller="none", omega0_dps=(0, 0, 0)))
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_series(r, blocker / "sub")


def test_divergent_run_is_flagged_not_raised():
    with np.errstate(all="ignore"):
        r = run_case(replace(SHORT, controller="none", omega0_dps=(1e154, 1e154, 1e154)))
    assert r.status == "failed" and r.message and len(r.series) >= 1


def test_suite(tmp_path):
    with pytest.raises(ConfigError):
        run_suite([])
    cfgs = [replace(SHORT, name="a", controller="bdot", omega0_dps=(1, 1, 1), max_duration=20.0), replace(SHORT, name="b", controller="none")]
    results, code = run_suite(cfgs, tmp_path, workers=1)
    assert code == 0 and [r.name for r in results] == ["a", "b"]
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == ",".join(SUMMARY_COLUMNS) and len(summary) == 3
    assert (tmp_path / "a_bdot.csv").exists()
    with np.errstate(all="ignore"):
        _, code = run_suite([replace(SHORT, controller="none", omega0_dps=(1e154, 1e154, 1e154))], workers=1)
    assert code == 2


def test_parallel_suite_matches_serial(tmp_path):
    cfgs = [replace(SHORT, name=f"p{i}", controller="bdot", omega0_dps=(i, 1.0, -1.0), max_duration=20.0) for i in range(3)]
    serial, _ = run_suite(cfgs, workers=1)
    parallel, _ = run_suite(cfgs, workers=2)
    for a, b in zip(serial, parallel):
        assert series_csv(a) == series_csv(b)


def test_bundled_dir_exists():
    assert sorted(p.name for p in bundled_cases_dir().glob("*.yaml")) == [f"case{i}.yaml" for i in range(1, 5)]
