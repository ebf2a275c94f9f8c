"""Berry-phase measurement protocol: map, prepare, loop, read out.

Stage A images an l=1 probe with a Gaussian pump and reads the unknown
phase c = phi12 + phi23 off the bright-lobe angle. Stage B switches to an
LG pump whose vortex cancels the probe's, so the loop phase is pi/2 at every
pixel. Stage C transports the dark state once around the torus. Stage D
returns to the Gaussian pump with the loop phase advanced by the acquired
holonomy and measures how far the lobes turned.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .atom import TWO_PI, CouplingConfig, NoDarkStateError, dark_state, eigen_spectrum, wrap_phase
from .holonomy import BerryResult, NonAdiabaticWarning, adiabatic_evolve, wrap_signed
from .propagation import IntensityMap, Scene, brightest_lobe, local_loop_phase, render

HALF_PI = 0.5 * math.pi


class ProtocolError(RuntimeError):
    pass


class DiabaticError(ProtocolError):
    pass


def default_scene(**changes) -> Scene:
    """Default l=1 probe, Gaussian pump, OD 1."""
    return Scene(**changes)


def with_unknown_phase(scene: Scene, c: float) -> Scene:
    """Scene whose control phase makes phi12 + phi23 = c."""
    cp = scene.coupling
    return replace(scene, coupling=replace(cp, phi12=c - cp.phi23))


def angular_resolution(scene: Scene, n_theta: int) -> float:
    """Coarser of the ring sampling step and one pixel of arc on the lobe ring."""
    return max(TWO_PI / n_theta, max(scene.grid.pitch) / scene.ring_radius())


@dataclass
class StageA:
    c_estimate: float
    bright_angle: float
    scene: Scene
    intensity: IntensityMap | None = field(default=None, repr=False)


def stage_map(c: float, scene: Scene | None = None, n_theta: int = 720, workers: int = 1) -> StageA:
    scene = with_unknown_phase(scene or default_scene(), c)
    if scene.pump.l != 0:
        raise ProtocolError("stage A needs a Gaussian pump")
    out = render(scene, workers=workers).output_intensity
    theta = brightest_lobe(out, scene.ring_radius(), n_theta)
    if theta is None:
        raise ProtocolError("no bright lobe on the ring; the phase cannot be estimated (is Omega12 = 0?)")
    # bright where -sin(c - l theta) peaks, i.e. l theta = c + pi/2
    return StageA(wrap_phase(scene.probe.l * theta - HALF_PI), theta, scene, out)


@dataclass
class StageB:
    uniformity: float  # max |Phi - pi/2| over pixels where both beams are on
    dark_fraction: float  # share of sampled ring pixels that admit a dark state
    ring_flatness: float  # relative peak-to-peak of the output intensity on the ring
    scene: Scene


def prepared_scene(c_estimate: float, scene: Scene, pump_l: int | None = None) -> Scene:
    """Scene with an LG pump whose phase profile satisfies phi23 - phi13 = pi/2 - c_estimate."""
    l = scene.probe.l if pump_l is None else pump_l
    if l != scene.probe.l:
        raise ProtocolError(f"pump charge {l} does not cancel probe charge {scene.probe.l}")
    pump = replace(scene.pump, l=l, m=0)
    coupling = replace(scene.coupling, phi23=HALF_PI - c_estimate)
    unknown = scene.coupling.phi12 + scene.coupling.phi23
    coupling = replace(coupling, phi12=unknown)
    return replace(scene, pump=pump, coupling=coupling)


def stage_prepare(c_estimate: float, scene: Scene, pump_l: int | None = None,
                  n_samples: int = 64) -> StageB:
    """Build the stage-B scene and check that the loop phase is uniform at pi/2.

    ``scene`` is the stage-A scene (it carries the true unknown phase).
    """
    sb = prepared_scene(c_estimate, scene, pump_l)
    X, Y = sb.grid.mesh()
    probe = sb.probe_at(X, Y)
    pump = sb.pump_at(X, Y)
    on = (np.abs(probe) > 0) & (np.abs(pump) > 0)
    phi = local_loop_phase(probe[on], sb.coupling, pump[on])
    uniformity = float(np.abs(wrap_signed(phi - HALF_PI)).max())

    theta = TWO_PI * np.arange(n_samples) / n_samples
    r = sb.ring_radius()
    xs, ys = r * np.cos(theta), r * np.sin(theta)
    pr, pu = sb.probe_at(xs, ys), sb.pump_at(xs, ys)
    ring_phi = local_loop_phase(pr, sb.coupling, pu)
    accepted = 0
    for a, b, ph in zip(np.abs(pr), np.abs(pu), ring_phi):
        try:
            dark_state(CouplingConfig(sb.coupling.omega12, float(b), float(a), phi12=float(ph)))
            accepted += 1
        except NoDarkStateError:
            pass

    ring = np.abs(sb.output_at(xs, ys)) ** 2
    flatness = float((ring.max() - ring.min()) / ring.max()) if ring.max() > 0 else 0.0
    return StageB(uniformity, accepted / n_samples, flatness, sb)


def recovery_error_bound(epsilon: float, magnitudes, total_time: float) -> float:
    """Readout error caused by a loop-phase error ``epsilon`` in stage B.

    The transported state then sits at the middle eigenvalue of H' at
    Phi = pi/2 + epsilon instead of zero energy and picks up that energy
    times the loop time as dynamical phase; the lobe reference is off by
    ``epsilon`` as well.
    """
    w12, w23, w13 = magnitudes
    mid = eigen_spectrum(CouplingConfig(w12, w23, w13, phi12=HALF_PI + epsilon))[1]
    return abs(epsilon) + abs(mid) * total_time


def stage_loop(magnitudes, total_time: float = 2000.0, n_steps: int = 200_000,
               uniformity: float = 0.0, threshold: float = 1e-6, ramp: str = "linear") -> BerryResult:
    if uniformity > threshold:
        raise ProtocolError(f"stage B loop phase not uniform: deviation {uniformity:.3g} > {threshold}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonAdiabaticWarning)
        berry = adiabatic_evolve(magnitudes, total_time, n_steps, ramp=ramp)
    if not berry.adiabatic:
        raise DiabaticError(
            f"loop was not adiabatic: fidelity {berry.adiabatic_fidelity:.4f} < 0.99 "
            f"(T={total_time}, gap={math.sqrt(sum(m * m for m in magnitudes)):.3g}); increase T"
        )
    return berry


@dataclass
class StageD:
    fringe_rotation: float
    recovered_gamma: float
    resolvable: bool
    intensity: IntensityMap | None = field(default=None, repr=False)


def stage_readout(berry: BerryResult, stage_a: StageA, n_theta: int = 720,
                  workers: int = 1) -> StageD:
    """Gaussian pump again, loop phase advanced by the holonomy; measure the lobe shift."""
    scene = stage_a.scene
    gamma = berry.geometric_phase
    shifted = replace(scene, coupling=replace(scene.coupling, phi12=scene.coupling.phi12 + gamma))
    out = render(shifted, workers=workers).output_intensity
    theta = brightest_lobe(out, shifted.ring_radius(), n_theta)
    if theta is None:
        raise ProtocolError("lobe detection failed in readout")
    l = scene.probe.l
    rotation = wrap_phase(theta - stage_a.bright_angle)
    resolvable = abs(wrap_signed(gamma)) > angular_resolution(scene, n_theta) * abs(l)
    return StageD(rotation, wrap_phase(l * rotation), resolvable, out)


@dataclass
class ProtocolReport:
    c_true: float
    c_estimate: float
    phi_uniformity: float
    dark_fraction: float
    ring_flatness: float
    error_bound: float
    berry: BerryResult
    fringe_rotation: float
    recovered_gamma: float
    resolvable: bool
    angular_resolution: float
    maps: dict = field(default_factory=dict, repr=False)  # stage name -> IntensityMap

    @property
    def gamma_error(self) -> float:
        return abs(wrap_signed(self.recovered_gamma - self.berry.gamma_closed_mod))

    def as_record(self) -> dict:
        rec = {k: getattr(self, k) for k in (
            "c_true", "c_estimate", "phi_uniformity", "dark_fraction", "ring_flatness",
            "error_bound", "fringe_rotation", "recovered_gamma", "resolvable", "angular_resolution")}
        rec["gamma_error"] = self.gamma_error
        rec["berry"] = self.berry.as_record()
        return rec

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.as_record().items() if k != "berry"]
        lines += [f"berry.{k}={v}" for k, v in self.berry.as_record().items()]
        if not self.resolvable:
            lines.append("note=rotation unresolvable at this resolution")
        return "\n".join(lines) + "\n"


def run_protocol(c: float, magnitudes=(1.0, 1.0, 1.0), scene: Scene | None = None,
                 total_time: float = 2000.0, n_steps: int = 200_000, exact: bool = False,
                 n_theta: int = 720, workers: int = 1,
                 uniformity_threshold: float = 1e-6, keep_maps: bool = False) -> ProtocolReport:
    """All four stages. ``magnitudes`` (Omega12, Omega23, Omega13) drive the loop.

    With ``exact`` stage B is prepared from the true c instead of the stage-A
    estimate. An estimate that misses c by more than ``uniformity_threshold``
    leaves the loop phase off pi/2 and stage C refuses to run; the message
    carries the resulting error bound. ``keep_maps`` attaches the output
    intensity of stages A, B and D to the report.
    """
    scene = scene or default_scene()
    a = stage_map(c, scene, n_theta, workers)
    b = stage_prepare(c if exact else a.c_estimate, a.scene)
    try:
        berry = stage_loop(magnitudes, total_time, n_steps, b.uniformity, uniformity_threshold)
    except ProtocolError as exc:
        if isinstance(exc, DiabaticError):
            raise
        bound = recovery_error_bound(b.uniformity, magnitudes, total_time)
        raise ProtocolError(f"{exc}; expected gamma error up to {bound:.3g} rad") from exc
    d = stage_readout(berry, a, n_theta, workers)
    maps = {}
    if keep_maps:
        maps = {"stage_a": a.intensity, "stage_b": render(b.scene, workers=workers).output_intensity,
                "stage_d": d.intensity}
    return ProtocolReport(
        c_true=wrap_phase(c),
        c_estimate=a.c_estimate,
        phi_uniformity=b.uniformity,
        dark_fraction=b.dark_fraction,
        ring_flatness=b.ring_flatness,
        error_bound=recovery_error_bound(b.uniformity, magnitudes, total_time),
        berry=berry,
        fringe_rotation=d.fringe_rotation,
        recovered_gamma=d.recovered_gamma,
        resolvable=d.resolvable,
        angular_resolution=angular_resolution(a.scene, n_theta),
        maps=maps,
    )
