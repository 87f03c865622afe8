"""Configuration parsing, command drivers and output artifacts."""

import csv
import subprocess
import sys
from pathlib import Path

import pytest

from poroflow.cli import (
    ConfigError,
    RunConfig,
    main,
    parse_config_text,
    resolve_config,
)

PRESETS = Path(__file__).resolve().parents[1] / "presets"


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- config text parsing -----------------------------------------------------


def test_parse_config_text_basics():
    items = parse_config_text(
        "# header comment\n"
        "\n"
        "mesh = 16   # inline comment\n"
        "  tol=1e-6\n"
        "schemes = mp, be\n"
    )
    assert items == {"mesh": "16", "tol": "1e-6", "schemes": "mp, be"}


def test_parse_config_text_rejects_duplicates():
    with pytest.raises(ConfigError, match="line 3.*duplicate"):
        parse_config_text("mesh = 4\ntol = 1e-6\nmesh = 8\n")


def test_parse_config_text_rejects_bare_words():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("mesh = 4\nverbose\n")


# -- resolution --------------------------------------------------------------


def test_resolve_layering_precedence():
    cfg = resolve_config("converge", {"tol": "1e-7", "out": "from_file"},
                         {"out": "from_flag"})
    assert cfg.scenario == "converge"
    assert cfg.model == "mms" and cfg.degree == 1  # scenario defaults
    assert cfg.tol == 1e-7  # file beats defaults
    assert cfg.out == "from_flag"  # flag beats file
    assert cfg.mesh_levels == (2, 4, 8, 16, 32, 64, 128)  # dataclass default


def test_resolve_defaults_per_scenario():
    q5 = resolve_config("q5spot")
    assert q5.model == "q5spot" and q5.degree == 2
    assert q5.taus == (1.0, 0.5, 0.25) and q5.mesh == 38
    assert q5.vtk and not q5.recover_pressure
    lt = resolve_config("longtime")
    assert lt.t_final == 20.0 and lt.mesh == 64 and lt.taus == (0.05, 1.0)


def test_resolve_rejects_unknown_key():
    with pytest.raises(ConfigError, match="unknown configuration key"):
        resolve_config("converge", {"meshsize": "16"})


def test_resolve_rejects_bad_values():
    with pytest.raises(ConfigError, match="'tau'"):
        resolve_config("custom", {"tau": "0"})
    with pytest.raises(ConfigError, match="'degree'"):
        resolve_config("custom", {"degree": "3"})
    with pytest.raises(ConfigError, match="'tau'"):
        resolve_config("custom", None, {"tau": -0.5})


def test_resolve_rejects_scenario_mismatch():
    with pytest.raises(ConfigError, match="scenario"):
        resolve_config("converge", {"scenario": "q5spot"})
    cfg = resolve_config("q5spot", {"scenario": "q5spot"})
    assert cfg.scenario == "q5spot"


def test_presets_resolve():
    for name, scenario in (("converge", "converge"), ("longtime", "longtime"),
                           ("q5spot", "q5spot")):
        items = parse_config_text((PRESETS / f"{name}.cfg").read_text())
        cfg = resolve_config(scenario, items)
        assert isinstance(cfg, RunConfig)
    conv = resolve_config(
        "converge", parse_config_text((PRESETS / "converge.cfg").read_text()))
    assert conv.mesh_levels[-1] == 128 and conv.tol == 1e-8
    q5 = resolve_config(
        "q5spot", parse_config_text((PRESETS / "q5spot.cfg").read_text()))
    assert q5.taus == (1.0, 0.5, 0.25) and q5.mesh == 38 and q5.degree == 2


def test_config_echo_round_trips(tmp_path):
    from poroflow.cli import write_config_echo

    cfg = resolve_config("longtime", {"mesh": "8", "taus": "0.5,0.25"})
    write_config_echo(cfg, tmp_path)
    echoed = parse_config_text((tmp_path / "config.txt").read_text())
    assert resolve_config("longtime", echoed) == cfg


# -- exit codes --------------------------------------------------------------


def test_main_rejects_unknown_scheme(capsys):
    assert main(["converge", "--scheme", "rk4"]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_main_rejects_missing_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2


def test_main_rejects_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("meshes = 4\n")
    assert main(["converge", "--config", str(cfg)]) == 2


def test_main_rejects_too_coarse_q5spot_mesh(tmp_path, capsys):
    cfg = tmp_path / "q5.cfg"
    cfg.write_text("taus = 1\nt_final = 2\nvtk = false\n")
    code = main(["q5spot", "--config", str(cfg), "--mesh", "10",
                 "--out", str(tmp_path / "out")])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_main_run_reports_numerical_failure(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "model = mms\nscheme = mp\nmesh = 6\ntau = 0.25\nt_final = 0.5\n"
        "tol = 1e-13\nmax_iters = 1\n")
    code = main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")])
    assert code == 1


def test_main_rejects_tau_not_dividing_t_final(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("model = mms\nscheme = mp\nmesh = 4\ntau = 0.3\nt_final = 1\n")
    assert main(["run", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 2


# -- command outputs ---------------------------------------------------------


def test_converge_command_outputs(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("mesh_levels = 2,4\nschemes = mp\n")
    out1 = tmp_path / "out1"
    assert main(["converge", "--config", str(cfg), "--out", str(out1)]) == 0
    assert (out1 / "config.txt").exists()
    report = (out1 / "model_validation.txt").read_text()
    assert "violations: none" in report
    table = _read_csv(out1 / "converge_mp.csv")
    assert table[0] == ["tau", "dofs", "err_pl", "rate_pl", "err_sa", "rate_sa"]
    assert len(table) == 3
    assert table[1][0] == "0.5" and table[1][1] == "9"
    assert table[1][3] == "" and table[1][5] == ""  # first row: no rates
    assert float(table[2][3]) != 0  # second row carries a rate
    # byte-identical on re-run into a fresh directory
    out2 = tmp_path / "out2"
    assert main(["converge", "--config", str(cfg), "--out", str(out2)]) == 0
    assert (out1 / "converge_mp.csv").read_bytes() == \
        (out2 / "converge_mp.csv").read_bytes()


def test_converge_command_records_failed_levels(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "mesh_levels = 2\nschemes = mp\ntol = 1e-13\nmax_iters = 1\n")
    out = tmp_path / "out"
    assert main(["converge", "--config", str(cfg), "--out", str(out)]) == 0
    table = _read_csv(out / "converge_mp.csv")
    assert table[1][2] == "failed" and table[1][4] == "failed"


def test_longtime_command_outputs(tmp_path):
    cfg = tmp_path / "lt.cfg"
    cfg.write_text(
        "mesh = 4\ntaus = 0.25\nschemes = mp,tl1\nt_final = 0.5\n")
    out = tmp_path / "out"
    assert main(["longtime", "--config", str(cfg), "--out", str(out)]) == 0
    summary = _read_csv(out / "summary.csv")
    assert summary[0][:3] == ["scheme", "tau", "outcome"]
    assert [row[0] for row in summary[1:]] == ["mp", "tl1"]
    assert all(row[2] == "completed" for row in summary[1:])
    for label in ("mp_tau0.25", "tl1_tau0.25"):
        assert (out / f"series_{label}.csv").exists()
        assert (out / f"steps_{label}.csv").exists()
        assert (out / f"ledger_{label}.csv").exists()
    steps = _read_csv(out / "steps_mp_tau0.25.csv")
    assert steps[0][0] == "step" and len(steps) == 3


def test_q5spot_command_outputs(tmp_path):
    cfg = tmp_path / "q5.cfg"
    cfg.write_text(
        "mesh = 20\ndegree = 1\ntaus = 2\nschemes = mp\nt_final = 4\n"
        "snapshot_times = 2\nmax_iters = 200\nprofile_points = 41\n")
    out = tmp_path / "out"
    assert main(["q5spot", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "mesh.vtk").exists()
    assert (out / "sa_initial.vtk").exists()
    assert (out / "sa_mp_tau2_t2.vtk").exists()
    summary = _read_csv(out / "summary.csv")
    assert summary[1][0] == "mp" and summary[1][2] == "completed"
    assert 1.0 <= float(summary[1][3]) <= 200.0
    profile = _read_csv(out / "profile_mp_tau2.csv")
    assert profile[0] == ["x", "s_a"]
    # the cut corners are excluded from the diagonal samples
    xs = [float(r[0]) for r in profile[1:]]
    assert min(xs) >= 5.0 and max(xs) <= 95.0


def test_run_command_outputs(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "model = mms\nscheme = mp\nmesh = 6\ntau = 0.25\nt_final = 0.5\n")
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "sa_mp_tau0.25_final.vtk").exists()
    assert (out / "pl_mp_tau0.25_final.vtk").exists()
    series = _read_csv(out / "series_mp_tau0.25.csv")
    assert series[0] == ["t", "err_pl", "err_sa", "rel_energy_err"]
    assert len(series) == 4  # t = 0, 0.25, 0.5 plus header
    assert (out / "ledger_mp_tau0.25.csv").exists()


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "poroflow.cli", "converge", "--help"],
        capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert "--config" in proc.stdout and "--tau" in proc.stdout
