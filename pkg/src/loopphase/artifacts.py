"""Run configuration, map and surface serialization, run manifests.

Configuration files are TOML. Every key has a default, so an empty file is a
valid configuration; unknown sections or keys are rejected by name. See
``examples/run.toml`` in the repository for an annotated file.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import os
import re
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .atom import CouplingConfig, RelaxationConfig
from .beam import ComplexField, GridSpec, LGModeSpec
from .holonomy import BerryResult, DarkManifold, SpectrumSurface
from .propagation import PropagationParams, ScalarMap, Scene

FORMATS = ("csv", "pgm16", "bin")
BIN_MAGIC_REAL = b"LPMAPR01"
BIN_MAGIC_COMPLEX = b"LPMAPC01"
BIN_HEADER = struct.Struct("<8sqqddd")  # magic, n_x, n_y, half_extent, center x, center y

# None means "derived from other keys"; see _resolve
DEFAULTS: dict = {
    "probe": {"l": 1, "m": 0, "w0": 100.0, "wavelength": 0.78},
    "pump": {"l": 0, "m": 0, "w0": None, "wavelength": None},
    "coupling": {"omega12": 0.1, "omega23": 5.0, "omega13": 0.1,
                 "phi12": 0.0, "phi23": 0.0, "phi13": 0.0},
    "relaxation": {"Gamma": 1.0, "gamma12": 1e-3, "gamma13": 1.0, "gamma23": None},
    "medium": {"od": None, "alpha": None, "L": 1.0, "n_z": 1024},
    "grid": {"n_x": 512, "n_y": 512, "half_extent": None, "center": [0.0, 0.0], "z": 0.0},
    "run": {"seed": 0, "workers": 1, "n_theta": 720, "format": "csv"},
    "berry": {"magnitudes": [1.0, 1.0, 1.0], "n_samples": 10000, "total_time": 2000.0,
              "n_steps": 200000, "ramp": "linear"},
    "protocol": {"c": 0.7853981633974483, "exact": True, "uniformity_threshold": 1e-6},
    "torus": {"resolution": 128, "magnitudes": [1.0, 1.0, 1.0]},
    "sweep": {"od": [], "phi12": [], "omega12": [], "omega23": [], "omega13": [], "l": []},
}
ANGLE_KEYS = {"coupling.phi12", "coupling.phi23", "coupling.phi13", "protocol.c", "sweep.phi12"}
INT_KEYS = {"probe.l", "probe.m", "pump.l", "pump.m", "medium.n_z", "grid.n_x", "grid.n_y",
            "run.seed", "run.workers", "run.n_theta", "berry.n_samples", "berry.n_steps",
            "torus.resolution", "sweep.l"}


class ConfigError(ValueError):
    pass


class ArtifactIOError(OSError):
    pass


_ANGLE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(deg)?\s*$")


def parse_angle(value) -> float:
    """Radians from a number or a string such as ``"1.047"`` or ``"60deg"``."""
    if isinstance(value, bool):
        raise ValueError(f"not an angle: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    match = _ANGLE.match(str(value))
    if not match:
        raise ValueError(f"not an angle: {value!r} (use radians or a 'deg' suffix)")
    number = float(match.group(1))
    return math.radians(number) if match.group(2) else number


def _coerce(path: str, value):
    if path in ANGLE_KEYS:
        if isinstance(value, list):
            return [parse_angle(v) for v in value]
        return parse_angle(value)
    if path in INT_KEYS:
        items = value if isinstance(value, list) else [value]
        for v in items:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{path}: expected an integer, got {v!r}")
    return value


@dataclass
class RunConfig:
    probe: LGModeSpec
    pump: LGModeSpec
    coupling: CouplingConfig
    relax: RelaxationConfig
    params: PropagationParams
    grid: GridSpec
    z: float
    options: dict  # run / berry / protocol / torus / sweep sections
    seed: int  # reserved; the core is deterministic
    effective: dict = field(repr=False)  # merged key tree, echoed into manifests

    def scene(self) -> Scene:
        return Scene(self.probe, self.pump, self.coupling, self.relax, self.params, self.grid, self.z)


def _merge(tree: dict, data: dict, origin: str):
    for section, body in data.items():
        if section not in DEFAULTS:
            raise ConfigError(f"{origin}: unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{origin}: [{section}] must be a table")
        for key, value in body.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"{origin}: unknown key '{key}' in [{section}]")
            set_key(tree, f"{section}.{key}", value)


def set_key(tree: dict, path: str, value):
    """Assign one dotted key; od and alpha exclude each other, the later one wins."""
    section, _, key = path.partition(".")
    if section not in DEFAULTS or key not in DEFAULTS[section]:
        raise ConfigError(f"unknown key '{path}'")
    tree[section][key] = _coerce(path, value)
    if path == "medium.od":
        tree["medium"]["alpha"] = None
    elif path == "medium.alpha":
        tree["medium"]["od"] = None


def parse_value(text: str):
    """Interpret a command-line override value: TOML scalar or array, else a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        pass
    if "," in text:
        return [parse_value(t.strip()) for t in text.split(",") if t.strip()]
    return text


def _section(name: str, build):
    try:
        return build()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def _resolve(tree: dict) -> RunConfig:
    p, pu, c, r = tree["probe"], tree["pump"], tree["coupling"], tree["relaxation"]
    probe = _section("probe", lambda: LGModeSpec(p["l"], p["m"], float(p["w0"]), float(p["wavelength"])))
    pu["w0"] = probe.w0 if pu["w0"] is None else pu["w0"]
    pu["wavelength"] = probe.wavelength if pu["wavelength"] is None else pu["wavelength"]
    pump = _section("pump", lambda: LGModeSpec(pu["l"], pu["m"], float(pu["w0"]), float(pu["wavelength"])))
    coupling = _section("coupling", lambda: CouplingConfig(**{k: float(v) for k, v in c.items()}))
    relax = _section("relaxation", lambda: RelaxationConfig(
        float(r["Gamma"]), float(r["gamma12"]), float(r["gamma13"]),
        None if r["gamma23"] is None else float(r["gamma23"])))
    r["gamma23"] = relax.gamma23

    m = tree["medium"]
    if m["od"] is None and m["alpha"] is None:
        m["od"] = 1.0
    if m["alpha"] is None:
        params = _section("medium", lambda: PropagationParams.from_od(float(m["od"]), float(m["L"]), m["n_z"]))
    else:
        params = _section("medium", lambda: PropagationParams(float(m["alpha"]), float(m["L"]), m["n_z"]))
    m["alpha"], m["od"] = params.alpha, params.optical_depth

    g = tree["grid"]
    g["half_extent"] = 3.0 * probe.w0 if g["half_extent"] is None else g["half_extent"]
    if not (isinstance(g["center"], list) and len(g["center"]) == 2):
        raise ConfigError("[grid] center must be a two-element array")
    grid = _section("grid", lambda: GridSpec(g["n_x"], g["n_y"], float(g["half_extent"]),
                                             (float(g["center"][0]), float(g["center"][1]))))
    if not math.isfinite(float(g["z"])):
        raise ConfigError("[grid] z must be finite")

    run = tree["run"]
    if run["format"] not in FORMATS:
        raise ConfigError(f"[run] format must be one of {FORMATS}, got {run['format']!r}")
    if run["workers"] < 1 or run["n_theta"] < 8:
        raise ConfigError("[run] workers must be >= 1 and n_theta >= 8")
    b = tree["berry"]
    if len(b["magnitudes"]) != 3 or any(float(x) < 0 for x in b["magnitudes"]):
        raise ConfigError("[berry] magnitudes must be three non-negative numbers")
    if b["ramp"] not in ("linear", "smooth"):
        raise ConfigError(f"[berry] ramp must be 'linear' or 'smooth', got {b['ramp']!r}")
    if len(tree["torus"]["magnitudes"]) != 3:
        raise ConfigError("[torus] magnitudes must be three numbers")
    options = {k: tree[k] for k in ("run", "berry", "protocol", "torus", "sweep")}
    return RunConfig(probe, pump, coupling, relax, params, grid, float(g["z"]), options,
                     int(run["seed"]), tree)


def build_config(data: dict | None = None, overrides=(), origin: str = "<config>") -> RunConfig:
    """Defaults, then ``data`` (a parsed TOML tree), then ``overrides`` in order."""
    tree = copy.deepcopy(DEFAULTS)
    _merge(tree, data or {}, origin)
    for path, value in overrides:
        set_key(tree, path, value)
    return _resolve(tree)


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ArtifactIOError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        # tomli reports "(at line N, column M)"
        raise ConfigError(f"{path}: parse error: {exc}") from None
    return build_config(data, overrides, str(path))


# ---- maps ------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_bytes(path: Path, payload: bytes):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise ArtifactIOError(f"{path}: {exc.strerror or exc}") from None


def _read_bytes(path: Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"{path}: {exc.strerror or exc}") from None


def _grid_line(grid: GridSpec, kind: str) -> str:
    return (f"# kind={kind} n_x={grid.n_x} n_y={grid.n_y} half_extent={grid.half_extent!r} "
            f"center_x={float(grid.center[0])!r} center_y={float(grid.center[1])!r}\n")


def _parse_grid_line(line: str):
    items = dict(tok.split("=", 1) for tok in line.lstrip("#").split())
    grid = GridSpec(int(items["n_x"]), int(items["n_y"]), float(items["half_extent"]),
                    (float(items["center_x"]), float(items["center_y"])))
    return grid, items["kind"]


def _map_kind(map_) -> str:
    if isinstance(map_, ComplexField):
        return "complex"
    if isinstance(map_, ScalarMap):
        return type(map_).__name__.replace("Map", "").lower() or "scalar"
    raise TypeError(f"cannot serialize {type(map_).__name__}")


def _csv_bytes(map_) -> bytes:
    x, y = map_.grid.mesh()
    cols = [x.ravel(), y.ravel()]
    if isinstance(map_, ComplexField):
        header = "x,y,Re,Im\n"
        cols += [map_.values.real.ravel(), map_.values.imag.ravel()]
    else:
        header = "x,y,value\n"
        cols.append(map_.values.ravel())
    body = np.column_stack(cols)
    lines = [",".join(repr(float(v)) for v in row) for row in body]
    return (_grid_line(map_.grid, _map_kind(map_)) + header + "\n".join(lines) + "\n").encode()


def pgm16_scale(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Linear map onto 0..65535 between min and max; a constant map goes to all zeros."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=">u2"), lo, hi
    scaled = np.rint((values - lo) / (hi - lo) * 65535.0)
    return scaled.astype(">u2"), lo, hi


def _pgm_bytes(map_) -> tuple[bytes, bytes]:
    if isinstance(map_, ComplexField):
        raise ValueError("pgm16 holds real maps only; export intensity or phase instead")
    pixels, lo, hi = pgm16_scale(map_.values)
    g = map_.grid
    # image rows run from the top, i.e. largest y first
    payload = f"P5\n{g.n_x} {g.n_y}\n65535\n".encode() + pixels[::-1].tobytes()
    meta = (_grid_line(g, _map_kind(map_)).lstrip("# ").replace(" ", "\n")
            + f"min={lo!r}\nmax={hi!r}\nrow_order=top_is_max_y\n"
            "scale=value=min+(max-min)*pixel/65535; min==max maps every pixel to 0\n")
    return payload, meta.encode()


def _bin_bytes(map_) -> bytes:
    g = map_.grid
    complex_ = isinstance(map_, ComplexField)
    head = BIN_HEADER.pack(BIN_MAGIC_COMPLEX if complex_ else BIN_MAGIC_REAL, g.n_x, g.n_y,
                           float(g.half_extent), float(g.center[0]), float(g.center[1]))
    data = map_.values.astype("<c16" if complex_ else "<f8")
    return head + data.tobytes()


def write_map(map_, path, fmt: str = "csv") -> str:
    """Write an intensity/phase map or complex field; return the sha256 of the file.

    pgm16 also writes ``<path>.meta`` holding the grid and the min/max scale.
    """
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    if not np.all(np.isfinite(map_.values)):
        raise ValueError("map contains non-finite values")
    path = Path(path)
    if fmt == "csv":
        _write_bytes(path, _csv_bytes(map_))
    elif fmt == "bin":
        _write_bytes(path, _bin_bytes(map_))
    else:
        payload, meta = _pgm_bytes(map_)
        _write_bytes(path, payload)
        _write_bytes(Path(str(path) + ".meta"), meta)
    return sha256_file(path)


def _wrap(grid, kind, values):
    if kind == "complex":
        return ComplexField(grid, values)
    from . import propagation

    cls = {"intensity": propagation.IntensityMap, "phase": propagation.PhaseMap}.get(kind, ScalarMap)
    return cls(grid, values)


def read_csv_map(path):
    lines = _read_bytes(Path(path)).decode().splitlines()
    grid, kind = _parse_grid_line(lines[0])
    data = np.array([[float(t) for t in ln.split(",")] for ln in lines[2:] if ln], dtype=float)
    shape = (grid.n_y, grid.n_x)
    if kind == "complex":
        values = (data[:, 2] + 1j * data[:, 3]).reshape(shape)
    else:
        values = data[:, 2].reshape(shape)
    return _wrap(grid, kind, values)


def read_bin_map(path):
    raw = _read_bytes(Path(path))
    magic, n_x, n_y, half, cx, cy = BIN_HEADER.unpack_from(raw)
    if magic not in (BIN_MAGIC_REAL, BIN_MAGIC_COMPLEX):
        raise ValueError(f"{path}: not a map file (magic {magic!r})")
    grid = GridSpec(n_x, n_y, half, (cx, cy))
    dtype = "<c16" if magic == BIN_MAGIC_COMPLEX else "<f8"
    values = np.frombuffer(raw, dtype=dtype, offset=BIN_HEADER.size).reshape(n_y, n_x)
    return _wrap(grid, "complex" if magic == BIN_MAGIC_COMPLEX else "scalar", values.copy())


def read_pgm16(path) -> tuple[np.ndarray, dict]:
    """Raw pixels (rows as stored, top row = largest y) and the sidecar entries."""
    raw = _read_bytes(Path(path))
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"65535":
        raise ValueError(f"{path}: not a 16-bit binary PGM")
    n_x, n_y = (int(t) for t in parts[1].split())
    pixels = np.frombuffer(parts[3], dtype=">u2").reshape(n_y, n_x)
    meta = {}
    for line in _read_bytes(Path(str(path) + ".meta")).decode().splitlines():
        key, _, value = line.partition("=")
        meta[key] = value
    return pixels, meta


# ---- surfaces and reports ---------------------------------------------------

def _matrix_csv(path: Path, matrix: np.ndarray) -> str:
    text = "\n".join(",".join(repr(float(v)) for v in row) for row in np.atleast_2d(matrix)) + "\n"
    _write_bytes(path, text.encode())
    return sha256_file(path)


def _points_csv(path: Path, points: np.ndarray, header: str) -> str:
    rows = [header] + [",".join(repr(float(v)) for v in p) for p in points]
    _write_bytes(path, ("\n".join(rows) + "\n").encode())
    return sha256_file(path)


def write_spectrum(surface: SpectrumSurface, directory) -> dict[str, str]:
    """Three sheet matrices (rows u, columns v), zero set, degeneracies, metadata."""
    directory = Path(directory)
    sums = {}
    for k in range(3):
        name = f"sheet{k}.csv"
        sums[name] = _matrix_csv(directory / name, surface.sheets[k])
    sums["zero_set.csv"] = _points_csv(directory / "zero_set.csv", surface.zero_set, "u,v")
    sums["degeneracies.csv"] = _points_csv(directory / "degeneracies.csv", surface.degeneracies, "u,v")
    meta = {"magnitudes": list(surface.magnitudes), "resolution": surface.resolution,
            "axes": "u = phi12 + phi23 (rows), v = phi13 (columns), both 2 pi k / resolution",
            "sheets": "ascending eigenvalues", "degeneracy_count": int(len(surface.degeneracies))}
    sums["spectrum.json"] = write_json(meta, directory / "spectrum.json")
    return sums


def write_manifold(manifold: DarkManifold, directory) -> dict[str, str]:
    directory = Path(directory)
    sums = {}
    for k, loop in enumerate(manifold.loops):
        sums[f"dark_loop{k}.csv"] = _points_csv(directory / f"dark_loop{k}.csv", loop, "u,v")
    meta = {"loop_phases": list(manifold.loop_phases), "windings": [list(w) for w in manifold.windings],
            "min_separation": manifold.min_separation, "disjoint": manifold.disjoint}
    sums["manifold.json"] = write_json(meta, directory / "manifold.json")
    return sums


def key_value_text(record: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in record.items())


def write_text(text: str, path) -> str:
    path = Path(path)
    _write_bytes(path, text.encode())
    return sha256_file(path)


def write_berry(result: BerryResult, path) -> str:
    return write_text(key_value_text(result.as_record()), path)


def write_json(data, path) -> str:
    return write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + "\n", path)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---- manifest ---------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    outputs: dict = field(default_factory=dict)  # path relative to the run directory -> sha256
    timings: dict = field(default_factory=dict)  # step -> wall-clock seconds
    extra: dict = field(default_factory=dict)

    def record(self, root, path, checksum: str | None = None):
        rel = os.path.relpath(path, root)
        self.outputs[rel] = checksum or sha256_file(path)

    def record_many(self, root, directory, sums: dict):
        for name, digest in sums.items():
            self.record(root, Path(directory) / name, digest)

    def timed(self, step: str):
        return _Timer(self.timings, step)

    def as_dict(self) -> dict:
        return {"command": self.command, "version": self.version, "config": self.config,
                "outputs": dict(sorted(self.outputs.items())), "timings": self.timings,
                **({"extra": self.extra} if self.extra else {})}

    def write(self, root) -> Path:
        path = Path(root) / "manifest.json"
        write_json(self.as_dict(), path)
        return path


class _Timer:
    def __init__(self, sink: dict, step: str):
        self.sink, self.step = sink, step

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.sink[self.step] = self.sink.get(self.step, 0.0) + time.perf_counter() - self.t0
        return False


def verify_manifest(path) -> list[str]:
    """Outputs whose checksum no longer matches (or which are missing)."""
    path = Path(path)
    data = json.loads(_read_bytes(path).decode())
    bad = []
    for rel, digest in data["outputs"].items():
        target = path.parent / rel
        if not target.exists() or sha256_file(target) != digest:
            bad.append(rel)
    return bad
