import subprocess
import sys

import numpy as np
import pytest

from pupiltrack.cli import main
from pupiltrack.imaging import load_pgm

CONFIG = """
[synth]
width = 240
height = 200
pupil_radius = 60
iris_radius = 80
frame_count = {n}
initial_center = 118.3, 100.6
velocity = 0.4, -0.2
noise_sigma = 4
[run]
mode = {mode}
seed = 3
"""


def write_cfg(tmp_path, n=6, mode="detect", extra=""):
    p = tmp_path / "cfg.ini"
    p.write_text(CONFIG.format(n=n, mode=mode) + extra)
    return p


def test_run_writes_all_outputs(tmp_path, capsys):
    cfg = write_cfg(tmp_path, mode="track", n=12)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 0
    for name in ("trajectory.csv", "metrics.txt", "series_x.dat", "series_y.dat",
                 "trajectory_x.png", "trajectory_y.png"):
        assert (out / name).stat().st_size > 0
    assert (out / "trajectory_x.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    printed = capsys.readouterr().out
    assert "frames = 12" in printed and "trk_mae_x" in printed
    assert printed.strip() == (out / "metrics.txt").read_text().strip()


def test_mode_override_and_no_plots(tmp_path):
    cfg = write_cfg(tmp_path, mode="track", extra="[output]\nplots = no\n")
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--mode", "detect", "--out-dir", str(out)]) == 0
    header = (out / "series_x.dat").read_text().splitlines()[0]
    assert "tracked" not in header
    assert not (out / "trajectory_x.png").exists()


def test_metrics_subcommand_recomputes(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    main(["run", "--config", str(cfg), "--out-dir", str(out)])
    capsys.readouterr()
    assert main(["metrics", "--csv", str(out / "trajectory.csv")]) == 0
    assert capsys.readouterr().out.strip() == (out / "metrics.txt").read_text().strip()


def test_synth_subcommand(tmp_path):
    cfg = write_cfg(tmp_path, n=3)
    out = tmp_path / "frames"
    assert main(["synth", "--config", str(cfg), "--out-dir", str(out)]) == 0
    names = sorted(p.name for p in out.glob("*.pgm"))
    assert names == ["frame_0000.pgm", "frame_0001.pgm", "frame_0002.pgm"]
    assert load_pgm(out / "frame_0000.pgm").shape == (200, 240)
    truth = np.loadtxt(out / "truth.txt")
    np.testing.assert_allclose(truth[2], [119.1, 100.2])


def test_directory_run_from_synth(tmp_path):
    cfg = write_cfg(tmp_path, n=3)
    frames = tmp_path / "frames"
    main(["synth", "--config", str(cfg), "--out-dir", str(frames)])
    dcfg = tmp_path / "dir.ini"
    dcfg.write_text("[input]\nsource = directory\ndirectory = frames\n")
    assert main(["run", "--config", str(dcfg), "--out-dir", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[1].split(",")[6] == ""


def test_exit_code_config_error(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[run]\nmode = sideways\n")
    assert main(["run", "--config", str(p)]) == 1
    assert "config error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.ini")]) == 1


def test_exit_code_processing_error(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    p = tmp_path / "d.ini"
    p.write_text("[input]\nsource = directory\ndirectory = empty\n")
    assert main(["run", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    assert "no frames" in capsys.readouterr().err


def test_exit_code_bad_pgm(tmp_path):
    d = tmp_path / "frames"
    d.mkdir()
    (d / "frame_0000.pgm").write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    p = tmp_path / "d.ini"
    p.write_text("[input]\nsource = directory\ndirectory = frames\n")
    assert main(["run", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2


def test_metrics_missing_csv(tmp_path):
    assert main(["metrics", "--csv", str(tmp_path / "nope.csv")]) == 2


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "pupiltrack.cli", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "run" in r.stdout and "synth" in r.stdout


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 2
