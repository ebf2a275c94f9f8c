import json
import math
import subprocess
import sys

import pytest

from loopphase.artifacts import verify_manifest
from loopphase.cli import build_parser, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def lobes(out):
    found = []
    for line in out.splitlines():
        if line.startswith("lobe="):
            kind, angle, _ = line[5:].split(",")
            found.append((kind, float(angle)))
    return found


def test_render_l1_bright_at_half_pi(tmp_path, capsys):
    code, out, _ = run(capsys, "render", "--l", 1, "--od", 1, "--grid", 256, "--out", tmp_path)
    assert code == 0
    assert lobes(out)[0][0] == "max"
    assert abs(lobes(out)[0][1] - math.pi / 2) < 2 * math.pi / 720
    assert verify_manifest(tmp_path / "manifest.json") == []
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["probe"]["l"] == 1
    assert manifest["config"]["medium"]["od"] == 1.0
    assert "output_intensity.csv" in manifest["outputs"]


def test_render_l2_od5(tmp_path, capsys):
    code, out, _ = run(capsys, "render", "--l", 2, "--od", 5, "--grid", 256, "--out", tmp_path)
    maxima = [a for k, a in lobes(out) if k == "max"]
    assert code == 0
    assert maxima == pytest.approx([math.pi / 4, 5 * math.pi / 4], abs=2 * math.pi / 720)


def test_render_rotation_and_deg_suffix(tmp_path, capsys):
    _, a, _ = run(capsys, "render", "--phi12", "1.0471975512", "--grid", 256, "--out", tmp_path / "a")
    _, b, _ = run(capsys, "render", "--phi12", "150deg", "--grid", 256, "--out", tmp_path / "b")
    shift = [(y - x) % (2 * math.pi) for (_, x), (_, y) in zip(sorted(lobes(a)), sorted(lobes(b)))]
    assert shift == pytest.approx([math.pi / 2] * 2, abs=2 * math.pi / 720)


def test_render_deterministic_and_formats(tmp_path, capsys):
    for d in ("x", "y"):
        run(capsys, "render", "--grid", 64, "--format", "pgm16", "--out", tmp_path / d)
    a = json.loads((tmp_path / "x" / "manifest.json").read_text())["outputs"]
    b = json.loads((tmp_path / "y" / "manifest.json").read_text())["outputs"]
    assert a == b
    assert "output_intensity.pgm.meta" in a


def test_overrides_last_wins(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[medium]\nod = 3.0\n[grid]\nn_x = 64\nn_y = 64\n")
    run(capsys, "render", "--config", cfg, "--od", 2, "--set", "medium.od=5", "--out", tmp_path / "o")
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["medium"]["od"] == 5.0


def test_png_quicklooks(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    code, _, _ = run(capsys, "render", "--grid", 64, "--png", "--out", tmp_path)
    assert code == 0
    assert (tmp_path / "output_intensity.png").stat().st_size > 0


def test_spectrum_equal_rabi_reports_degeneracies(tmp_path, capsys):
    code, out, _ = run(capsys, "spectrum", "--equal-rabi", "--resolution", 32, "--out", tmp_path)
    assert code == 0
    count = int(next(l for l in out.splitlines() if l.startswith("degeneracy_points=")).split("=")[1])
    assert count > 0
    assert (tmp_path / "sheet1.csv").exists()


def test_torus_unequal_two_disjoint_loops(tmp_path, capsys):
    code, out, _ = run(capsys, "torus", "--magnitudes", "0.5,1,1.5", "--resolution", 32, "--out", tmp_path)
    assert code == 0
    assert "disjoint=True" in out
    assert "windings=[(1, 1), (1, 1)]" in out
    assert (tmp_path / "dark_loop0.csv").exists() and (tmp_path / "dark_loop1.csv").exists()


def test_torus_resolution_zero_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "torus", "--resolution", 0, "--out", tmp_path)
    assert code == 2
    assert "resolution" in err


def test_berry_equal_rabi(tmp_path, capsys):
    code, out, _ = run(capsys, "berry", "--equal-rabi", "--total-time", 300, "--n-steps", 30000,
                       "--out", tmp_path)
    rec = dict(line.split("=", 1) for line in out.splitlines())
    assert code == 0
    assert float(rec["gamma_closed_mod"]) == pytest.approx(2 * math.pi / 3)
    assert abs(float(rec["gamma_wilson_mod"]) - 2 * math.pi / 3) < 1e-4
    assert (tmp_path / "berry.txt").exists()


def test_berry_diabatic_exits_3(tmp_path, capsys):
    code, _, err = run(capsys, "berry", "--equal-rabi", "--total-time", 2, "--n-steps", 2000, "--out", tmp_path)
    assert code == 3
    assert "adiabatic" in err


def test_protocol(tmp_path, capsys):
    code, out, _ = run(capsys, "protocol", "--c", 0.7854, "--grid", 128, "--total-time", 300,
                       "--n-steps", 30000, "--dump-maps", "--out", tmp_path)
    rec = dict(line.split("=", 1) for line in out.splitlines())
    assert code == 0
    assert abs(float(rec["recovered_gamma"]) - 2 * math.pi / 3) < 0.05
    assert (tmp_path / "stage_b_intensity.csv").exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["extra"]["report"]["resolvable"] is True


def test_protocol_estimated_abort_exits_3(tmp_path, capsys):
    code, _, err = run(capsys, "protocol", "--c", 0.123, "--estimated", "--grid", 128,
                       "--total-time", 50, "--n-steps", 5000, "--out", tmp_path)
    assert code == 3
    assert "not uniform" in err


def test_sweep_parallel(tmp_path, capsys):
    code, out, _ = run(capsys, "sweep", "--l", "1,2", "--od", "1,5", "--grid", 64, "--jobs", 2,
                       "--out", tmp_path)
    assert code == 0
    rows = out.strip().splitlines()
    assert rows[0].startswith("point,od,l,visibility")
    assert len(rows) == 5
    for k in range(4):
        assert verify_manifest(tmp_path / f"point_{k:03d}" / "manifest.json") == []


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[coupling]\nomega14 = 1\n")
    code, _, err = run(capsys, "render", "--config", bad, "--out", tmp_path)
    assert code == 2 and "omega14" in err
    code, _, err = run(capsys, "render", "--config", tmp_path / "missing.toml")
    assert code == 4


def test_io_error_exit_4(tmp_path, capsys):
    blocker = tmp_path / "f"
    blocker.write_text("")
    code, _, err = run(capsys, "render", "--grid", 16, "--out", blocker / "sub")
    assert code == 4


def test_bad_flag_value_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["render", "--phi12", "ninety"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_help_documents_reproductions():
    text = build_parser().format_help()
    for cmd in ("render --l 1 --od 1", "render --l 2 --od 5", "sweep --l 1 --od 0.5,10",
                "--phi12 60deg", "spectrum --equal-rabi", "torus --magnitudes", "berry --equal-rabi",
                "protocol --c 0.7854"):
        assert cmd in text


def test_validate_subset(tmp_path, capsys):
    code, out, _ = run(capsys, "validate", "--only", "7,8", "--out", tmp_path / "v.txt")
    assert code == 0
    assert "passed=2 failed=0" in out


def test_validate_failure_exits_3(capsys):
    code, out, _ = run(capsys, "validate", "--only", "6")
    assert code == 3
    assert "failing=6" in out


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "loopphase.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "loopphase" in res.stdout
