import numpy as np

from detumble.cli import main
from detumble.sim import bundled_cases_dir

CASE1 = str(bundled_cases_dir() / "case1.yaml")


def test_run_writes_summary_and_series(tmp_path, capsys):
    code = main(["run", CASE1, "--controller", "bdot", "--max-minutes", "0.5", "--truth-model", "dipole", "--out", str(tmp_path), "--plot"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("case,controller,")
    assert "case1,bdot" in out and "case1,nmpc" not in out
    assert {p.name for p in tmp_path.iterdir()} == {"case1_bdot.csv", "case1_bdot_omega.svg", "case1_bdot_mx.svg", "summary.csv"}


def test_suite_over_list(tmp_path, capsys):
    p = tmp_path / "mini.yaml"
    p.write_text("controllers: [none, bdot]\nomega0_dps: [0.5, 0.5, 0.5]\nsimulation: {max_minutes: 0.2, truth_model: dipole}\n")
    assert main(["suite", str(p), "--out", str(tmp_path / "o"), "--workers", "1"]) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 3


def test_failed_run_exit_code(tmp_path):
    p = tmp_path / "boom.yaml"
    p.write_text("controller: none\nomega0_dps: [1.0e+154, 1.0e+154, 1.0e+154]\nsimulation: {max_minutes: 0.1, truth_model: dipole}\n")
    with np.errstate(all="ignore"):
        assert main(["run", str(p), "--out", str(tmp_path)]) == 2


def test_usage_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.yaml")]) == 1
    assert main(["suite", str(tmp_path)]) == 1  # directory with no configs
    bad = tmp_path / "bad.yaml"
    bad.write_text("inertia: [1, 1, 5]\n")
    assert main(["run", str(bad)]) == 1
    try:
        main(["frobnicate"])
    except SystemExit as exc:
        assert exc.code == 1
    else:
        raise AssertionError("expected argparse exit")


def test_field_compare_and_rank_sweep(tmp_path, capsys):
    assert main(["field-compare", CASE1, "--out", str(tmp_path), "--step", "60"]) == 0
    lines = (tmp_path / "case1_field_compare.csv").read_text().splitlines()
    assert lines[0].startswith("t_s,dipole_x_T") and len(lines) > 90
    assert main(["rank-sweep", CASE1, "--out", str(tmp_path), "--samples", "36", "--at-rest"]) == 0
    assert "min_rank=3" in capsys.readouterr().out
    assert (tmp_path / "case1_rank_sweep.csv").exists()


def test_missing_igrf_file_is_reported(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DETUMBLE_IGRF_DIR", str(tmp_path))
    assert main(["field-compare", CASE1, "--out", str(tmp_path)]) == 1
    assert "g/h n m" in capsys.readouterr().err
