import json

import pytest

from skinlab import cli
from skinlab.io import dumps


def _run(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


def test_spectrum_command_writes_dump_and_manifest(tmp_path, capsys):
    stem = tmp_path / "spec"
    code, payload = _run(capsys, ["spectrum", "--model", "measure", "--bc", "pbc", "--L", "8", "--gamma", "0.5", "--output", str(stem)])
    assert code == 0
    assert payload["ok"] is True
    assert payload["outputs"] == [str(tmp_path / "spec.json")]
    dump = dumps.read_spectrum(tmp_path / "spec.json")
    assert dump.zero_mode_count == 2
    assert len(dump.eigenvalues) == 64
    manifest = dumps.read_manifest(tmp_path / "spec.json")
    assert manifest.command == "spectrum"
    assert manifest.config["L"] == 8


def test_reruns_are_byte_identical(tmp_path, capsys):
    argv = ["spectrum", "--bc", "obc", "--L", "5", "--gamma", "0.4", "--format", "csv", "--modes", "2"]
    cli.main(argv + ["--output", str(tmp_path / "a")])
    cli.main(argv + ["--output", str(tmp_path / "b")])
    capsys.readouterr()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a_modes.csv").read_bytes() == (tmp_path / "b_modes.csv").read_bytes()
    header, rows = dumps.read_table(tmp_path / "a.csv")
    assert header == ["re", "im"]
    assert len(rows) == 25


def test_validation_errors_exit_with_code_two(tmp_path, capsys):
    code, payload = _run(capsys, ["spectrum", "--L", "1"])
    assert code == 2
    assert payload["code"] == "validation_error"
    assert payload["message"].startswith("L:")

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"L": 4, "colour": "red"}))
    code, payload = _run(capsys, ["spectrum", "--config", str(cfg)])
    assert code == 2
    assert payload["code"] == "validation_error"


def test_domain_errors_are_reported(tmp_path, capsys):
    code, payload = _run(capsys, ["relax", "--L", "4", "--init", "domainwall", "--output", str(tmp_path / "r")])
    assert code == 2
    assert payload == {"code": "invalid_model", "message": "domainwall needs a particle-number sector (--N)", "op": "cmd_relax"}


def test_config_file_merges_with_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"L": 6, "bc": "pbc", "gamma": 2.0}))
    code, _ = _run(capsys, ["spectrum", "--config", str(cfg), "--gamma", "0.3", "--output", str(tmp_path / "m")])
    assert code == 0
    dump = dumps.read_spectrum(tmp_path / "m.json")
    assert (dump.L, dump.bc, dump.gamma) == (6, "pbc", 0.3)


def test_gap_scan_over_sizes(tmp_path, capsys):
    code, payload = _run(
        capsys, ["scan", "--L", "4,6", "--gamma", "0.5", "--quantity", "gap", "--jobs", "2", "--output", str(tmp_path / "scan")]
    )
    assert code == 0
    rows = dumps.read_scan(tmp_path / "scan.csv")
    assert [r["L"] for r in rows] == [4, 6]
    assert all(r["error"] is None and r["gap"] > 0 for r in rows)


def test_scan_exits_nonzero_when_every_row_fails(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli.settings, "DENSE_DIM_CAP", 10)
    code, payload = _run(capsys, ["scan", "--L", "4,6", "--gamma", "0.5", "--quantity", "gap", "--output", str(tmp_path / "s")])
    assert code == 1
    assert payload["ok"] is False
    assert [r["error"] for r in dumps.read_scan(tmp_path / "s.csv")] == ["dimension_cap", "dimension_cap"]


def test_relax_command_reports_tau(tmp_path, capsys):
    code, _ = _run(capsys, ["relax", "--bc", "obc", "--L", "6", "--gamma", "0.6", "--output", str(tmp_path / "r")])
    assert code == 0
    report = dumps.read_report(tmp_path / "r_report.json")
    assert report.init == "lastsite"
    assert report.tau > 0
    assert report.tau_times_gap == pytest.approx(report.tau * report.gap)
    evo = dumps.read_evolution(tmp_path / "r_evolution.csv")
    assert list(evo) == ["t", "d", "n_1", "n_6"]
    assert evo["n_6"][0] == pytest.approx(1.0)


def test_steady_command_fits_edge_profile(tmp_path, capsys):
    code, payload = _run(capsys, ["steady", "--bc", "obc", "--L", "10", "--gamma", "0.6", "--output", str(tmp_path / "st")])
    assert code == 0
    summary = dumps.read_steady(tmp_path / "st.json")
    assert summary.states == ["st_state0.csv"]
    assert summary.fit.loc_length > 0
    profile = dumps.read_profile(tmp_path / "st_diag0.csv")
    assert profile[0] > profile[-1]
    assert profile.sum() == pytest.approx(1.0)


def test_steady_command_compares_with_closed_form(tmp_path, capsys):
    code, _ = _run(capsys, ["steady", "--bc", "pbc", "--L", "6", "--gamma", "0.7", "--output", str(tmp_path / "p")])
    assert code == 0
    assert dumps.read_steady(tmp_path / "p.json").trace_distance < 1e-6


def test_perturb_command_compares_with_exact(tmp_path, capsys):
    code, _ = _run(
        capsys, ["perturb", "--bc", "pbc", "--L", "6", "--gamma", "0.05", "--compare", "--output", str(tmp_path / "pt")]
    )
    assert code == 0
    dump = dumps.read_spectrum(tmp_path / "pt.json")
    assert dump.order == 1
    assert dump.precision == "perturbative"
    assert dump.max_distance < 1e-2


def test_traj_command_defaults_to_half_filling(tmp_path, capsys):
    code, payload = _run(
        capsys, ["traj", "--L", "4", "--gamma", "0.5", "--ntraj", "3", "--t-max", "1", "--sample-dt", "0.5", "--output", str(tmp_path / "tr")]
    )
    assert code == 0
    back = dumps.read_trajectories(tmp_path / "tr.csv")
    assert back["t"].tolist() == [0.0, 0.5, 1.0]
    assert back["eta"][0] == pytest.approx(-1.0)
    assert back["mean"].sum(axis=1) == pytest.approx([2.0, 2.0, 2.0])


def test_relax_report_carries_edge_localization(tmp_path, capsys):
    code, _ = _run(capsys, ["relax", "--bc", "obc", "--L", "14", "--gamma", "0.6", "--output", str(tmp_path / "r")])
    assert code == 0
    report = dumps.read_report(tmp_path / "r_report.json")
    assert 0 < report.loc_length < 14
    assert 0 < report.normalized_tau_gap < report.tau_times_gap
    if report.classification == "SkinDelayed":
        assert report.fit_ratio == pytest.approx(report.tau / report.predicted_tau)
