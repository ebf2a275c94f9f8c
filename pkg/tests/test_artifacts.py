import json
import math
from pathlib import Path

import numpy as np
import pytest

from loopphase.artifacts import (ArtifactIOError, ConfigError, RunManifest, build_config, load_config,
                                 parse_angle, pgm16_scale, read_bin_map, read_csv_map, read_pgm16,
                                 verify_manifest, write_berry, write_manifold, write_map, write_spectrum)
from loopphase.beam import ComplexField, GridSpec
from loopphase.holonomy import BerryResult, dark_manifold, spectrum_surface
from loopphase.propagation import IntensityMap, PhaseMap, Scene, render

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture(scope="module")
def rendering():
    return render(Scene(grid=GridSpec(40, 30, 300.0, center=(10.0, -5.0))))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_minimal_config_fills_defaults(tmp_path):
    p = write(tmp_path, "min.toml", "[probe]\nl = 1\n[coupling]\nomega13 = 0.1\nomega12 = 0.1\nomega23 = 5.0\n")
    cfg = load_config(p)
    assert cfg.relax.gamma12 == 1e-3
    assert cfg.relax.gamma23 == pytest.approx((1 + 1e-3) / 2)
    assert cfg.z == 0.0
    assert (cfg.grid.n_x, cfg.grid.n_y) == (512, 512)
    assert cfg.grid.half_extent == 3 * cfg.probe.w0
    assert cfg.params.optical_depth == 1.0
    assert cfg.effective["relaxation"]["gamma23"] == cfg.relax.gamma23


def test_annotated_example_loads():
    cfg = load_config(ROOT / "configs" / "example.toml")
    assert cfg.scene().probe.l == 1


def test_negative_waist_names_field(tmp_path):
    p = write(tmp_path, "bad.toml", "[probe]\nw0 = -5.0\n")
    with pytest.raises(ConfigError, match="w0"):
        load_config(p)


def test_unknown_key_named(tmp_path):
    p = write(tmp_path, "bad.toml", "[coupling]\nomega14 = 1.0\n")
    with pytest.raises(ConfigError, match="omega14"):
        load_config(p)


def test_parse_error_has_line_number(tmp_path):
    p = write(tmp_path, "bad.toml", "[probe]\nl = 1\nw0 = = 2\n")
    with pytest.raises(ConfigError, match="line 3"):
        load_config(p)


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(ArtifactIOError, match="nope.toml"):
        load_config(tmp_path / "nope.toml")


def test_integer_fields_checked():
    with pytest.raises(ConfigError, match="probe.l"):
        build_config({"probe": {"l": 1.5}})


def test_angles_and_overrides_last_wins():
    assert parse_angle("90deg") == pytest.approx(math.pi / 2)
    assert parse_angle(" -1.5e-1 ") == -0.15
    with pytest.raises(ValueError):
        parse_angle("ninety")
    cfg = build_config({"coupling": {"phi12": "30deg"}}, [("coupling.phi12", "45deg"), ("coupling.phi12", 0.5)])
    assert cfg.coupling.phi12 == 0.5
    cfg = build_config({"medium": {"alpha": 3.0}}, [("medium.od", 2.0)])
    assert cfg.params.optical_depth == 2.0


def test_od_and_alpha_last_wins_in_file_order():
    cfg = build_config({}, [("medium.od", 4.0), ("medium.alpha", 2.0)])
    assert cfg.params.alpha == 2.0


@pytest.mark.parametrize("fmt", ["csv", "bin"])
@pytest.mark.parametrize("which", ["output", "output_intensity", "output_phase"])
def test_round_trip(tmp_path, rendering, fmt, which):
    m = getattr(rendering, which)
    path = tmp_path / f"m.{fmt}"
    write_map(m, path, fmt)
    back = read_csv_map(path) if fmt == "csv" else read_bin_map(path)
    assert back.grid == m.grid
    scale = np.abs(m.values).max()
    assert np.abs(back.values - m.values).max() <= 1e-15 * scale


def test_bin_header_layout(tmp_path, rendering):
    path = tmp_path / "m.bin"
    write_map(rendering.output_intensity, path, "bin")
    raw = path.read_bytes()
    assert raw[:8] == b"LPMAPR01"
    assert int.from_bytes(raw[8:16], "little") == 40
    assert len(raw) == 48 + 8 * 40 * 30


def test_csv_is_row_major(tmp_path):
    grid = GridSpec(3, 2, 3.0)
    m = IntensityMap(grid, np.arange(6.0).reshape(2, 3))
    path = tmp_path / "m.csv"
    write_map(m, path, "csv")
    rows = path.read_text().splitlines()
    assert rows[1] == "x,y,value"
    assert rows[2] == "-2.0,-1.5,0.0"
    assert rows[3].startswith("0.0,-1.5,1.0")


def test_same_map_same_checksum(tmp_path, rendering):
    for fmt in ("csv", "bin", "pgm16"):
        a = write_map(rendering.output_intensity, tmp_path / f"a.{fmt}", fmt)
        b = write_map(rendering.output_intensity, tmp_path / f"b.{fmt}", fmt)
        assert a == b


def test_pgm16_constant_map(tmp_path):
    grid = GridSpec(8, 4, 1.0)
    path = tmp_path / "zero.pgm"
    write_map(IntensityMap(grid, np.zeros((4, 8))), path, "pgm16")
    pixels, meta = read_pgm16(path)
    assert pixels.shape == (4, 8) and not pixels.any()
    assert float(meta["min"]) == 0.0 and float(meta["max"]) == 0.0


def test_pgm16_linear_scale(tmp_path):
    grid = GridSpec(2, 2, 1.0)
    values = np.array([[0.0, 1.0], [2.0, 4.0]])
    path = tmp_path / "m.pgm"
    write_map(IntensityMap(grid, values), path, "pgm16")
    pixels, meta = read_pgm16(path)
    # top image row is the largest y
    assert pixels.tolist() == [[32768, 65535], [0, 16384]]
    lo, hi = float(meta["min"]), float(meta["max"])
    back = lo + (hi - lo) * pixels[::-1] / 65535
    assert np.abs(back - values).max() <= (hi - lo) / 65535
    scaled, lo, hi = pgm16_scale(values)
    assert (lo, hi) == (0.0, 4.0)


def test_pgm16_rejects_complex(tmp_path, rendering):
    with pytest.raises(ValueError):
        write_map(rendering.output, tmp_path / "c.pgm", "pgm16")


def test_write_errors_name_path(tmp_path, rendering):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ArtifactIOError, match="file"):
        write_map(rendering.output_intensity, blocker / "m.csv", "csv")
    with pytest.raises(ValueError):
        write_map(PhaseMap(GridSpec(2, 2, 1.0), np.full((2, 2), np.nan)), tmp_path / "n.csv")


def test_spectrum_and_manifold_export(tmp_path):
    surface = spectrum_surface((1, 1, 1), 16)
    sums = write_spectrum(surface, tmp_path)
    sheet = np.loadtxt(tmp_path / "sheet2.csv", delimiter=",")
    assert sheet.shape == (16, 16)
    assert np.array_equal(sheet, surface.sheets[2])
    meta = json.loads((tmp_path / "spectrum.json").read_text())
    assert meta["resolution"] == 16 and meta["degeneracy_count"] == len(surface.degeneracies)
    sums.update(write_manifold(dark_manifold(20), tmp_path))
    assert {"sheet0.csv", "zero_set.csv", "dark_loop1.csv", "manifold.json"} <= set(sums)


def test_berry_text(tmp_path):
    result = BerryResult(-4 * math.pi / 3, -4.18879, 1e-6, 0.9999, 10000)
    write_berry(result, tmp_path / "b.txt")
    lines = dict(line.split("=", 1) for line in (tmp_path / "b.txt").read_text().splitlines())
    assert float(lines["gamma_closed_mod"]) == pytest.approx(2 * math.pi / 3)
    assert lines["loop_samples"] == "10000"


def test_manifest_verifies_and_detects_tampering(tmp_path, rendering):
    manifest = RunManifest("render", {"probe": {"l": 1}})
    with manifest.timed("write"):
        path = tmp_path / "out" / "i.csv"
        manifest.record(tmp_path, path, write_map(rendering.output_intensity, path, "csv"))
    mpath = manifest.write(tmp_path)
    data = json.loads(mpath.read_text())
    assert data["outputs"] == {"out/i.csv": manifest.outputs["out/i.csv"]}
    assert data["timings"]["write"] >= 0
    assert verify_manifest(mpath) == []
    path.write_text("changed")
    assert verify_manifest(mpath) == ["out/i.csv"]


def test_complex_field_csv_columns(tmp_path):
    f = ComplexField(GridSpec(2, 2, 1.0), np.array([[1 + 2j, 0], [0, -1j]]))
    write_map(f, tmp_path / "f.csv", "csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[1] == "x,y,Re,Im"
