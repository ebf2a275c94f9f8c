"""Acceptance checks, one function per numbered criterion.

Each check returns a :class:`Check`; runtime budgets are part of the verdict.
Used by ``loopphase validate`` and by the acceptance test module.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from .atom import (TWO_PI, CouplingConfig, RelaxationConfig, build_hamiltonian_full,
                   build_hamiltonian_reduced, characteristic_residual, dark_state, eigen_spectrum,
                   steady_probe_coherence, weak_probe_coherence)
from .beam import GridSpec, LGModeSpec, mode_norm
from .holonomy import adiabatic_evolve, berry_phase_closed, berry_phase_wilson, wrap_signed
from .propagation import (PropagationParams, Scene, lobe_angles, propagate_analytic,
                          propagate_numeric, relative_deviation, render, visibility)
from .protocol import run_protocol, stage_map

N_THETA = 720
STEP = TWO_PI / N_THETA  # angular grid step of the ring profile


@dataclass
class Check:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f} s)"


def _timed(number: int, title: str, budget: float | None = None):
    def wrap(fn):
        def run() -> Check:
            t0 = time.perf_counter()
            passed, detail = fn()
            seconds = time.perf_counter() - t0
            if budget is not None and seconds >= budget:
                passed = False
                detail += f"; runtime {seconds:.1f} s over budget {budget:.0f} s"
            return Check(number, title, bool(passed), detail, seconds)
        run.number = number
        run.title = title
        return run
    return wrap


def _near(angle: float, target: float, tol: float = STEP) -> bool:
    return abs(wrap_signed(angle - target)) <= tol


def _fmt(lobes) -> str:
    return ", ".join(f"{kind} {a / math.pi:.4f}pi" for a, kind in lobes) or "none"


@_timed(1, "LG mode normalization", budget=5.0)
def criterion_1():
    worst = 0.0
    for l in range(-3, 4):
        for m in range(3):
            worst = max(worst, abs(mode_norm(LGModeSpec(l=l, m=m)) - 1.0))
    return worst < 1e-6, f"max |norm - 1| = {worst:.2e} over |l|<=3, m<=2"


@_timed(2, "analytic vs RK4 propagation", budget=30.0)
def criterion_2():
    rng = np.random.default_rng(20240611)
    relax = RelaxationConfig()
    worst = 0.0
    grid = GridSpec(48, 48, 300.0)
    for _ in range(20):
        coupling = CouplingConfig(
            omega12=rng.uniform(0.01, 1.0), omega23=rng.uniform(0.5, 8.0), omega13=rng.uniform(0.01, 0.3),
            phi12=rng.uniform(0, TWO_PI), phi23=rng.uniform(0, TWO_PI), phi13=rng.uniform(0, TWO_PI))
        scene = Scene(probe=LGModeSpec(l=int(rng.integers(-3, 4))), pump=LGModeSpec(l=int(rng.integers(0, 2))),
                      coupling=coupling, relax=relax, grid=grid,
                      params=PropagationParams.from_od(rng.uniform(0.1, 20.0), n_z=400))
        field_in, pump = scene.input_field(), scene.pump_field()
        exact = propagate_analytic(field_in, coupling, relax, scene.params, pump=pump)
        numeric = propagate_numeric(field_in, coupling, relax, scene.params, pump=pump, check=False)
        worst = max(worst, relative_deviation(numeric, exact))
    return worst < 1e-8, f"max relative deviation {worst:.2e} over 20 configs, OD in [0.1, 20]"


@_timed(3, "weak-probe vs steady-state coherence")
def criterion_3():
    relax = RelaxationConfig()
    errors = {}
    for w13 in (0.01, 0.1):
        c = CouplingConfig(omega12=0.1, omega23=5.0, omega13=w13)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            weak = weak_probe_coherence(c, relax)
        exact = steady_probe_coherence(c, relax)
        errors[w13] = abs(weak - exact) / abs(exact)
    ok = errors[0.01] < 0.01 and errors[0.01] < errors[0.1]
    return ok, f"relative error {errors[0.01]:.2e} at Omega13=0.01, {errors[0.1]:.2e} at 0.1"


def _lobes(l: int, od: float, phi12: float = 0.0, radius_factor: float = 1.0):
    scene = Scene(probe=LGModeSpec(l=l), coupling=CouplingConfig(phi12=phi12),
                  params=PropagationParams.from_od(od))
    out = render(scene).output_intensity
    return out, scene, lobe_angles(out, scene.ring_radius() * radius_factor, N_THETA)


@_timed(4, "lobe positions", budget=60.0)
def criterion_4():
    t0 = time.perf_counter()
    _, _, l1 = _lobes(1, 1.0)
    t_map = time.perf_counter() - t0
    maxima = [a for a, k in l1 if k == "max"]
    minima = [a for a, k in l1 if k == "min"]
    ok1 = (len(maxima) == 1 and len(minima) == 1 and _near(maxima[0], math.pi / 2)
           and _near(minima[0], 3 * math.pi / 2))

    out, scene, l2 = _lobes(2, 5.0)
    maxima = [a for a, k in l2 if k == "max"]
    ok2 = len(maxima) == 2 and all(any(_near(a, t) for a in maxima) for t in (math.pi / 4, 5 * math.pi / 4))

    # bright lobes at 3pi/4 and 7pi/4 on any ring outside the intensity maximum
    outer_hits = []
    for factor in np.linspace(1.1, 2.2, 12):
        lobes = lobe_angles(out, scene.ring_radius() * factor, N_THETA)
        bright = [a for a, k in lobes if k == "max"]
        if all(any(_near(a, t) for a in bright) for t in (3 * math.pi / 4, 7 * math.pi / 4)):
            outer_hits.append(factor)
    ok3 = bool(outer_hits)
    detail = (f"l=1 OD1 [{_fmt(l1)}] {'ok' if ok1 else 'off'}; l=2 OD5 [{_fmt(l2)}] "
              f"{'ok' if ok2 else 'off'}; outer-ring maxima at 3pi/4, 7pi/4: "
              f"{'found' if ok3 else 'absent (those angles are minima at every radius)'}; "
              f"map time {t_map:.1f} s")
    return ok1 and ok2 and ok3 and t_map < 20.0, detail


@_timed(5, "lobe rotation under phi12 shift")
def criterion_5():
    _, _, a = _lobes(1, 1.0, math.pi / 3)
    _, _, b = _lobes(1, 1.0, 5 * math.pi / 6)
    kinds_a = sorted(k for _, k in a)
    ok = bool(a) and kinds_a == sorted(k for _, k in b)
    shifts = []
    for kind in ("max", "min"):
        for x, y in zip([t for t, k in a if k == kind], [t for t, k in b if k == kind]):
            shifts.append(wrap_signed(y - x))
    ok = ok and all(_near(s, math.pi / 2) for s in shifts)
    return ok, "extrema shifts " + ", ".join(f"{s / math.pi:.4f}pi" for s in shifts)


@_timed(6, "visibility versus optical depth")
def criterion_6():
    vis = {}
    for l, od in ((1, 0.5), (1, 10.0), (2, 1.0), (2, 20.0)):
        out, scene, _ = _lobes(l, od)
        vis[(l, od)] = visibility(out, scene.ring_radius(), N_THETA)
    ok1 = vis[(1, 0.5)] > vis[(1, 10.0)]
    ok2 = vis[(2, 20.0)] > vis[(2, 1.0)]
    detail = (f"l=1: V(OD0.5)={vis[(1, 0.5)]:.4f} vs V(OD10)={vis[(1, 10.0)]:.4f} "
              f"{'ok' if ok1 else 'reversed'}; l=2: V(OD20)={vis[(2, 20.0)]:.4f} vs "
              f"V(OD1)={vis[(2, 1.0)]:.4f} {'ok' if ok2 else 'reversed'}")
    return ok1 and ok2, detail


@_timed(7, "spectrum of the loop Hamiltonian")
def criterion_7():
    rng = np.random.default_rng(7)
    resid = trace = 0.0
    for _ in range(200):
        c = CouplingConfig(*rng.uniform(0.05, 5.0, 3), phi12=rng.uniform(0, TWO_PI))
        lam = eigen_spectrum(c)
        resid = max(resid, float(np.abs(characteristic_residual(lam, c)).max()))
        trace = max(trace, abs(float(lam.sum())))
    generic = (0.7, 1.3, 0.9)
    at_dark = float(np.abs(eigen_spectrum(CouplingConfig(*generic, phi12=math.pi / 2))).min())
    at_zero = float(np.abs(eigen_spectrum(CouplingConfig(*generic))).min())
    equal = max(float(np.abs(eigen_spectrum(CouplingConfig(w, w, w)) - w * np.array([-1, -1, 2])).max())
                for w in (0.5, 1.0, 2.0))
    ok = resid < 1e-10 and trace < 1e-12 and at_dark < 1e-10 and at_zero > 1e-3 and equal < 1e-10
    return ok, (f"residual {resid:.1e}, |sum| {trace:.1e}, |min| {at_dark:.1e} at pi/2 and "
                f"{at_zero:.3f} at 0, equal-Rabi error {equal:.1e}")


@_timed(8, "dark state annihilated by H'")
def criterion_8():
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        mags = rng.uniform(0.05, 5.0, 3)
        for phi in (math.pi / 2, 3 * math.pi / 2):
            c = CouplingConfig(*mags, phi12=phi)
            worst = max(worst, float(np.linalg.norm(build_hamiltonian_reduced(c) @ dark_state(c))))
    return worst < 1e-12, f"max ||H'D|| = {worst:.1e} over 100 triples"


@_timed(9, "Berry phase, Wilson loop vs closed form", budget=5.0)
def criterion_9():
    worst = 0.0
    for ratio in (0.25, 1.0, 4.0):
        mags = (ratio, 1.0, 1.0)
        _, wrapped = berry_phase_wilson(mags, 10_000)
        worst = max(worst, abs(wrap_signed(wrapped - berry_phase_closed(mags))))
    equal = abs(wrap_signed(berry_phase_closed((1, 1, 1)) - TWO_PI / 3))
    tiny = (1e-9, 1.0, 1.0)
    limit = max(abs(wrap_signed(berry_phase_closed(tiny))), abs(wrap_signed(berry_phase_wilson(tiny)[1])))
    ok = worst < 1e-4 and equal < 1e-12 and limit < 1e-4
    return ok, (f"max Wilson-closed gap {worst:.1e} (Omega12/Omega23 in 0.25, 1, 4), equal-Rabi "
                f"offset {equal:.1e}, Omega12->0 residue {limit:.1e}")


@_timed(10, "adiabatic transport", budget=60.0)
def criterion_10():
    res = adiabatic_evolve((1.0, 1.0, 1.0), total_time=2000.0, n_steps=200_000)
    geo = abs(wrap_signed(res.geometric_phase - TWO_PI / 3))
    ok = res.adiabatic_fidelity >= 0.999 and geo < 1e-2 and abs(res.dynamical_phase) < 1e-3
    return ok, (f"fidelity {res.adiabatic_fidelity:.6f}, geometric phase {res.geometric_phase:.6f} "
                f"(off by {geo:.1e}), dynamical phase {res.dynamical_phase:.1e}")


@_timed(11, "gauge invariance")
def criterion_11():
    rng = np.random.default_rng(11)
    worst = 0.0
    grid = GridSpec(96, 96, 300.0)
    for l in (1, 2):
        base = CouplingConfig(phi12=rng.uniform(0, TWO_PI), phi23=rng.uniform(0, TWO_PI),
                              phi13=rng.uniform(0, TWO_PI))
        ref = render(Scene(probe=LGModeSpec(l=l), coupling=base, grid=grid))
        for _ in range(5):
            a, b = rng.uniform(-10, 10, 2)
            moved = CouplingConfig(base.omega12, base.omega23, base.omega13,
                                   base.phi12 + a, base.phi23 + b, base.phi13 + a + b)
            r = render(Scene(probe=LGModeSpec(l=l), coupling=moved, grid=grid))
            di = np.abs(r.output_intensity.values - ref.output_intensity.values).max()
            di /= ref.output_intensity.values.max()
            dp = np.abs(wrap_signed(r.relative_phase.values - ref.relative_phase.values)).max()
            ds = np.abs(eigen_spectrum(moved) - eigen_spectrum(base)).max()
            dh = np.abs(np.linalg.eigvalsh(build_hamiltonian_full(moved))
                        - np.linalg.eigvalsh(build_hamiltonian_full(base))).max()
            worst = max(worst, di, dp, ds, dh)
    return worst < 1e-12, f"max change {worst:.1e} across intensity, phase and spectra"


@_timed(12, "end-to-end protocol")
def criterion_12():
    report = run_protocol(math.pi / 4, magnitudes=(1.0, 1.0, 1.0), exact=True, n_theta=N_THETA)
    estimator = max(abs(wrap_signed(stage_map(k * math.pi / 8, n_theta=N_THETA).c_estimate - k * math.pi / 8))
                    for k in range(16))
    ok = report.gamma_error < 0.05 and estimator <= STEP
    return ok, (f"recovered {report.recovered_gamma:.4f} vs closed {report.berry.gamma_closed_mod:.4f} "
                f"(error {report.gamma_error:.1e}); stage-A max error {estimator:.1e} <= step {STEP:.1e}")


CRITERIA = {fn.number: fn for fn in (
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
    criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12)}


def run_all(selection=None, echo=None) -> list[Check]:
    results = []
    for number in sorted(selection or CRITERIA):
        check = CRITERIA[number]()
        if echo:
            echo(check.line())
        results.append(check)
    return results
