"""Command-line entry point: ``loopphase <command> [options]``.

Exit codes: 0 success, 2 usage or invalid configuration, 3 validation or
protocol failure, 4 file I/O error.
"""
from __future__ import annotations

import argparse
import itertools
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .artifacts import (FORMATS, ArtifactIOError, ConfigError, RunManifest, build_config,
                        key_value_text, load_config, parse_angle, parse_value, write_berry,
                        write_json, write_manifold, write_map, write_spectrum, write_text)
from .holonomy import (adiabatic_evolve, berry_phase_closed, berry_phase_wilson, dark_manifold,
                       spectrum_surface)
from .propagation import lobe_angles, render, visibility
from .protocol import ProtocolError, run_protocol

EXIT_OK, EXIT_USAGE, EXIT_FAILED, EXIT_IO = 0, 2, 3, 4

REPRODUCE = """\
reproduction commands:
  lobes of an l=1 probe, OD 1           loopphase render --l 1 --od 1
  lobes of an l=2 probe, OD 5           loopphase render --l 2 --od 5
  visibility against OD, l=1 and l=2    loopphase sweep --l 1 --od 0.5,10
                                        loopphase sweep --l 2 --od 1,20
  lobe rotation with phi12              loopphase render --l 1 --phi12 60deg
                                        loopphase render --l 1 --phi12 150deg
  eigenvalue sheets on the torus        loopphase spectrum --magnitudes 0.5,1,1.5
  degenerate (equal Rabi) sheets        loopphase spectrum --equal-rabi
  dark-state loops on the torus         loopphase torus --magnitudes 0.5,1,1.5
  Berry phase, closed form and Wilson   loopphase berry --equal-rabi
  measurement protocol, stage maps      loopphase protocol --c 0.7854 --dump-maps
  acceptance suite                      loopphase validate
"""


class Override(argparse.Action):
    """Append (key path, value) to ``namespace.overrides`` so later flags win."""

    def __init__(self, option_strings, dest, key=None, convert=None, **kwargs):
        self.key, self.convert = key, convert
        super().__init__(option_strings, dest, **kwargs)

    def __call__(self, parser, namespace, values, option_string=None):
        items = getattr(namespace, "overrides", None) or []
        if self.key is None:  # --set key=value
            path, sep, text = values.partition("=")
            if not sep:
                parser.error(f"--set expects key=value, got {values!r}")
            items.append((path.strip(), parse_value(text.strip())))
        else:
            try:
                value = self.convert(values) if self.convert else parse_value(values)
            except ValueError as exc:
                parser.error(f"{option_string}: {exc}")
            for key in (self.key if isinstance(self.key, tuple) else (self.key,)):
                items.append((key, value))
        namespace.overrides = items


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _angles(text: str) -> list[float]:
    return [parse_angle(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _magnitudes(text: str) -> list[float]:
    values = _floats(text)
    if len(values) != 3:
        raise ValueError("expected three comma-separated magnitudes Omega12,Omega23,Omega13")
    return values


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="TOML run configuration")
    p.add_argument("--out", type=Path, help="output directory (default runs/<command>)")
    p.add_argument("--set", metavar="KEY=VALUE", action=Override, default=None, dest="overrides",
                   help="override any configuration key, e.g. coupling.phi12=90deg; later wins")
    p.add_argument("--format", action=Override, key="run.format", dest="overrides",
                   convert=str, help=f"map format, one of {', '.join(FORMATS)}")
    p.add_argument("--workers", action=Override, key="run.workers", dest="overrides", convert=int,
                   help="threads for grid evaluation")
    p.add_argument("--png", action="store_true", help="also save PNG quick-looks (needs matplotlib)")


SWEEP_AXES = (("l", "probe.l", _ints), ("od", "medium.od", _floats), ("phi12", "coupling.phi12", _angles),
              ("omega12", "coupling.omega12", _floats), ("omega23", "coupling.omega23", _floats),
              ("omega13", "coupling.omega13", _floats))


def _scene_flags(p: argparse.ArgumentParser, sweep: bool = False):
    """Scene overrides; with ``sweep`` the swept quantities take comma lists instead."""
    flag = dict(action=Override, dest="overrides")
    scalar = {"l": (int, "probe topological charge"), "od": (float, "optical depth alpha*L"),
              "phi12": (parse_angle, "phi12 in radians, or degrees with a 'deg' suffix"),
              "omega12": (float, "peak omega12 in units of gamma13"),
              "omega23": (float, "peak omega23 in units of gamma13"),
              "omega13": (float, "peak omega13 in units of gamma13")}
    for name, path, listed in SWEEP_AXES:
        if sweep:
            p.add_argument(f"--{name}", key=f"sweep.{name}", convert=listed,
                           help=f"comma-separated values of {name}", **flag)
        else:
            conv, text = scalar[name]
            p.add_argument(f"--{name}", key=path, convert=conv, help=text, **flag)
    p.add_argument("--m", key="probe.m", convert=int, help="probe radial index", **flag)
    p.add_argument("--pump-l", key="pump.l", convert=int, help="pump topological charge", **flag)
    for name in ("phi23", "phi13"):
        p.add_argument(f"--{name}", key=f"coupling.{name}", convert=parse_angle,
                       help=f"{name} in radians, or degrees with a 'deg' suffix", **flag)
    p.add_argument("--grid", key=("grid.n_x", "grid.n_y"), convert=int, help="pixels per side", **flag)
    p.add_argument("--n-theta", key="run.n_theta", convert=int, help="ring profile samples", **flag)


def _magnitude_flags(p: argparse.ArgumentParser, section: str):
    p.add_argument("--magnitudes", action=Override, key=f"{section}.magnitudes", dest="overrides",
                   convert=_magnitudes, help="Omega12,Omega23,Omega13")
    p.add_argument("--equal-rabi", action=Override, key=f"{section}.magnitudes", dest="overrides",
                   nargs=0, convert=lambda _: [1.0, 1.0, 1.0], help="shorthand for --magnitudes 1,1,1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loopphase", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Loop-phase imaging of LG probe beams in closed-loop three-level media.",
        epilog=REPRODUCE)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    fmt = argparse.RawDescriptionHelpFormatter

    p = sub.add_parser("render", help="input/output intensity and phase maps plus lobe report",
                       formatter_class=fmt, epilog=REPRODUCE)
    _common(p)
    _scene_flags(p)

    for name, text in (("spectrum", "eigenvalue sheets over the (phi12+phi23, phi13) torus"),
                       ("torus", "dark-state loops and zero set on the torus")):
        p = sub.add_parser(name, help=text, formatter_class=fmt, epilog=REPRODUCE)
        _common(p)
        _magnitude_flags(p, "torus")
        p.add_argument("--resolution", action=Override, key="torus.resolution", dest="overrides",
                       convert=int, help="samples per torus axis (>= 16)")

    p = sub.add_parser("berry", help="Berry phase: closed form, Wilson loop, adiabatic transport",
                       formatter_class=fmt, epilog=REPRODUCE)
    _common(p)
    _magnitude_flags(p, "berry")
    flag = dict(action=Override, dest="overrides")
    p.add_argument("--total-time", key="berry.total_time", convert=float, help="loop time in 1/gamma13", **flag)
    p.add_argument("--n-steps", key="berry.n_steps", convert=int, help="RK4 steps", **flag)
    p.add_argument("--samples", key="berry.n_samples", convert=int, help="Wilson loop samples", **flag)
    p.add_argument("--ramp", key="berry.ramp", convert=str, help="linear or smooth", **flag)
    p.add_argument("--no-evolve", action="store_true", help="skip the adiabatic integration")

    p = sub.add_parser("protocol", help="four-stage Berry phase measurement",
                       formatter_class=fmt, epilog=REPRODUCE)
    _common(p)
    _scene_flags(p)
    _magnitude_flags(p, "berry")
    p.add_argument("--c", action=Override, key="protocol.c", dest="overrides", convert=parse_angle,
                   help="unknown phase phi12 + phi23 to be mapped")
    p.add_argument("--estimated", action=Override, key="protocol.exact", dest="overrides", nargs=0,
                   convert=lambda _: False, help="prepare stage B from the stage-A estimate")
    p.add_argument("--total-time", action=Override, key="berry.total_time", dest="overrides",
                   convert=float, help="loop time in 1/gamma13")
    p.add_argument("--n-steps", action=Override, key="berry.n_steps", dest="overrides", convert=int,
                   help="RK4 steps")
    p.add_argument("--dump-maps", action="store_true", help="write stage A, B and D intensity maps")

    p = sub.add_parser("sweep", help="render over a parameter grid, one directory per point",
                       formatter_class=fmt, epilog=REPRODUCE)
    _common(p)
    _scene_flags(p, sweep=True)
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("validate", help="run the acceptance checks; exit 3 on any failure")
    p.add_argument("--only", type=_ints, help="comma-separated criterion numbers")
    p.add_argument("--out", type=Path, help="also write the report here")
    return parser


# ---- commands ---------------------------------------------------------------

def _config(args):
    overrides = getattr(args, "overrides", None) or []
    if args.config is not None:
        return load_config(args.config, overrides)
    return build_config({}, overrides)


def _lobe_text(lobes, extra: dict) -> str:
    lines = [f"{k}={v}" for k, v in extra.items()]
    lines.append("kind,angle_rad,angle_over_pi")
    lines += [f"{kind},{angle!r},{angle / math.pi!r}" for angle, kind in lobes]
    return "\n".join(lines) + "\n"


def _render_into(cfg, out: Path, manifest: RunManifest, png: bool) -> dict:
    scene = cfg.scene()
    opts = cfg.options["run"]
    fmt = opts["format"]
    with manifest.timed("render"):
        rendering = render(scene, workers=opts["workers"])
    with manifest.timed("lobes"):
        radius = scene.ring_radius()
        maps = rendering.output_intensity
        lobes = lobe_angles(maps, radius, opts["n_theta"]) if radius > 0 else []
        vis = visibility(maps, radius, opts["n_theta"]) if radius > 0 else float("nan")
    ext = {"csv": "csv", "bin": "bin", "pgm16": "pgm"}[fmt]
    items = {"input_intensity": rendering.input_intensity, "output_intensity": rendering.output_intensity,
             "input_phase": rendering.input_phase, "output_phase": rendering.output_phase,
             "relative_phase": rendering.relative_phase}
    with manifest.timed("write"):
        for name, m in items.items():
            path = out / f"{name}.{ext}"
            manifest.record(out, path, write_map(m, path, fmt))
            if fmt == "pgm16":
                manifest.record(out, Path(str(path) + ".meta"))
        summary = {"ring_radius": radius, "visibility": vis, "lobe_count": len(lobes),
                   "loop_phase_uniform": cfg.coupling.loop_phase}
        path = out / "lobes.txt"
        manifest.record(out, path, write_text(_lobe_text(lobes, summary), path))
    if png:
        from .plotting import save_map_png

        pngs = []
        for name, m in items.items():
            cmap = "twilight" if "phase" in name else "inferno"
            target = out / f"{name}.png"
            save_map_png(m, target, name.replace("_", " "), cmap, radius if "output_int" in name else None,
                         lobes)
            pngs.append(target.name)
        manifest.extra["png"] = pngs
    return {"lobes": lobes, "visibility": vis}


def cmd_render(args, cfg, out: Path) -> int:
    manifest = RunManifest("render", cfg.effective)
    res = _render_into(cfg, out, manifest, args.png)
    manifest.write(out)
    print(f"visibility={res['visibility']}")
    for angle, kind in res["lobes"]:
        print(f"lobe={kind},{angle!r},{angle / math.pi:.6f}pi")
    print(f"out={out}")
    return EXIT_OK


def cmd_spectrum(args, cfg, out: Path) -> int:
    t = cfg.options["torus"]
    manifest = RunManifest(args.command, cfg.effective)
    mags = tuple(float(x) for x in t["magnitudes"])
    with manifest.timed("surface"):
        surface = spectrum_surface(mags, t["resolution"])
    manifest.record_many(out, out, write_spectrum(surface, out))
    if args.command == "torus":
        manifold = dark_manifold(t["resolution"])
        manifest.record_many(out, out, write_manifold(manifold, out))
        print(f"windings={manifold.windings}")
        print(f"disjoint={manifold.disjoint}")
        print(f"min_separation={manifold.min_separation}")
    if args.png:
        from .plotting import save_loops_png, save_sheets_png

        save_sheets_png(surface, out / "sheets.png")
        if args.command == "torus":
            save_loops_png(manifold, out / "dark_loops.png")
    manifest.write(out)
    print(f"zero_points={len(surface.zero_set)}")
    print(f"degeneracy_points={len(surface.degeneracies)}")
    for u, v in surface.degeneracies[:16]:
        print(f"degeneracy={float(u)!r},{float(v)!r}")
    print(f"out={out}")
    return EXIT_OK


def cmd_berry(args, cfg, out: Path) -> int:
    b = cfg.options["berry"]
    mags = tuple(float(x) for x in b["magnitudes"])
    manifest = RunManifest("berry", cfg.effective)
    if args.no_evolve:
        from .holonomy import BerryResult

        raw, _ = berry_phase_wilson(mags, b["n_samples"])
        result = BerryResult(berry_phase_closed(mags), raw, float("nan"), float("nan"), b["n_samples"])
    else:
        with manifest.timed("adiabatic"), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = adiabatic_evolve(mags, b["total_time"], b["n_steps"], b["ramp"], b["n_samples"])
    path = out / "berry.txt"
    manifest.record(out, path, write_berry(result, path))
    manifest.write(out)
    sys.stdout.write(key_value_text(result.as_record()))
    if not args.no_evolve and not result.adiabatic:
        print("error=loop not adiabatic; increase --total-time", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_protocol(args, cfg, out: Path) -> int:
    p, b, run = cfg.options["protocol"], cfg.options["berry"], cfg.options["run"]
    manifest = RunManifest("protocol", cfg.effective)
    with manifest.timed("protocol"):
        report = run_protocol(
            p["c"], tuple(float(x) for x in b["magnitudes"]), cfg.scene(), b["total_time"],
            b["n_steps"], exact=bool(p["exact"]), n_theta=run["n_theta"], workers=run["workers"],
            uniformity_threshold=float(p["uniformity_threshold"]), keep_maps=args.dump_maps)
    text = report.to_text()
    path = out / "protocol.txt"
    manifest.record(out, path, write_text(text, path))
    ext = {"csv": "csv", "bin": "bin", "pgm16": "pgm"}[run["format"]]
    for stage, m in report.maps.items():
        target = out / f"{stage}_intensity.{ext}"
        manifest.record(out, target, write_map(m, target, run["format"]))
        if run["format"] == "pgm16":
            manifest.record(out, Path(str(target) + ".meta"))
        if args.png:
            from .plotting import save_map_png

            save_map_png(m, out / f"{stage}_intensity.png", stage)
    manifest.extra["report"] = report.as_record()
    manifest.write(out)
    sys.stdout.write(text)
    return EXIT_OK


def _sweep_point(task):
    index, data, overrides, out, png = task
    cfg = build_config(data, overrides)
    point_dir = Path(out) / f"point_{index:03d}"
    manifest = RunManifest("sweep-point", cfg.effective)
    res = _render_into(cfg, point_dir, manifest, png)
    manifest.write(point_dir)
    bright = [a for a, k in res["lobes"] if k == "max"]
    return index, res["visibility"], bright


def cmd_sweep(args, cfg, out: Path, data: dict) -> int:
    axes = {k: v for k, v in cfg.options["sweep"].items() if v}
    paths = {name: path for name, path, _ in SWEEP_AXES}
    base = [(k, v) for k, v in (getattr(args, "overrides", None) or []) if not k.startswith("sweep.")]
    points = [dict(zip(axes, combo)) for combo in itertools.product(*axes.values())] or [{}]
    tasks = [(i, data, base + [(paths[k], v) for k, v in pt.items()], str(out), args.png)
             for i, pt in enumerate(points)]
    # validate every point before any work starts
    for task in tasks:
        build_config(task[1], task[2])
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    lines = ["point," + ",".join(axes) + ",visibility,bright_lobes_rad"]
    for (index, vis, bright), pt in zip(sorted(results), points):
        values = ",".join(repr(pt[k]) for k in axes)
        lines.append(f"{index},{values}{',' if axes else ''}{vis!r},{' '.join(repr(a) for a in bright)}")
    summary = "\n".join(lines) + "\n"
    write_text(summary, out / "sweep.csv")
    write_json({"axes": axes, "points": len(points)}, out / "sweep.json")
    sys.stdout.write(summary)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import run_all

    checks = run_all(args.only, echo=print)
    failed = [c.number for c in checks if not c.passed]
    summary = f"passed={len(checks) - len(failed)} failed={len(failed)}"
    if failed:
        summary += " failing=" + ",".join(map(str, failed))
    print(summary)
    if args.out:
        write_text("\n".join(c.line() for c in checks) + "\n" + summary + "\n", args.out)
    return EXIT_FAILED if failed else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        cfg = _config(args)
        out = args.out or Path("runs") / args.command
        if args.command == "render":
            return cmd_render(args, cfg, out)
        if args.command in ("spectrum", "torus"):
            return cmd_spectrum(args, cfg, out)
        if args.command == "berry":
            return cmd_berry(args, cfg, out)
        if args.command == "protocol":
            return cmd_protocol(args, cfg, out)
        data = {}
        if args.config is not None:
            import tomli

            data = tomli.loads(args.config.read_text())
        return cmd_sweep(args, cfg, out, data)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        print(f"error: protocol: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (ArtifactIOError, OSError) as exc:
        print(f"error: I/O: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
