"""Weak-probe propagation of a structured probe through the closed-loop medium.

Fields live in the lab frame: the probe pixel carries its own vortex phase,
and the light scattered out of the pump/control pair carries the phase
phi12 + phi23 + arg(pump) - phi13. The local loop phase at a pixel is

    Phi(x, y) = phi12 + phi23 + arg(pump) - phi13 - arg(probe)

which reduces to phi12 + phi23 - l theta for an LG probe and Gaussian pump.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .atom import (TWO_PI, CouplingConfig, RelaxationConfig, effective_width, probe_coherence,
                   wrap_phase)
from .beam import ComplexField, GridSpec, LGModeSpec, evaluate_xy

SERIES_CUTOFF = 1e-8


@dataclass(frozen=True)
class PropagationParams:
    alpha: float = 1.0
    L: float = 1.0
    n_z: int = 1024

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not (math.isfinite(self.L) and self.L > 0):
            raise ValueError(f"L must be > 0, got {self.L}")
        if self.n_z < 2:
            raise ValueError(f"n_z must be >= 2, got {self.n_z}")

    @property
    def optical_depth(self) -> float:
        return self.alpha * self.L

    @classmethod
    def from_od(cls, od: float, L: float = 1.0, n_z: int = 1024) -> "PropagationParams":
        return cls(alpha=od / L, L=L, n_z=n_z)


@dataclass(frozen=True)
class PropagationCoefficients:
    beta: float
    delta: float

    @property
    def ratio(self) -> float:
        """delta / beta = Omega12 Omega23 / gamma12."""
        return self.delta / self.beta


def _coefficient_arrays(omega23, omega12, relax: RelaxationConfig, alpha: float):
    width = effective_width(omega23, relax) * relax.gamma13
    beta = alpha * relax.gamma12 / width
    delta = alpha * omega12 * np.abs(omega23) / width
    return beta, delta


def coefficients(config: CouplingConfig, relax: RelaxationConfig,
                 params: PropagationParams) -> PropagationCoefficients:
    """Amplitude decay rate and scattering source for the local pump strength.

    Obtained by inserting the weak-probe coherence into dOmega13/dz = i alpha rho13.
    """
    beta, delta = _coefficient_arrays(config.omega23, config.omega12, relax, params.alpha)
    return PropagationCoefficients(float(beta), float(delta))


def growth_factor(beta, z):
    """(1 - e^{-beta z}) / beta, finite as beta -> 0."""
    beta = np.asarray(beta, dtype=float)
    x = beta * z
    small = x < SERIES_CUTOFF
    safe = np.where(small, 1.0, beta)
    out = np.where(small, z * (1.0 - 0.5 * x), -np.expm1(-x) / safe)
    return out[()] if out.ndim == 0 else out


def _pump_arrays(config: CouplingConfig, pump, shape):
    if pump is None:
        return np.full(shape, config.omega23), np.full(shape, config.phi23)
    values = pump.values if isinstance(pump, ComplexField) else np.asarray(pump)
    return np.abs(values), config.phi23 + np.angle(values)


def source_phase(config: CouplingConfig, pump_phase):
    """Phase carried by the light scattered into the probe mode."""
    return config.phi12 + pump_phase - config.phi13


def local_loop_phase(probe_values, config: CouplingConfig, pump=None):
    """Per-pixel loop phase in [0, 2 pi); arg(probe) is taken as 0 where the probe vanishes."""
    probe_values = np.asarray(probe_values)
    _, pump_phase = _pump_arrays(config, pump, probe_values.shape)
    return wrap_phase(source_phase(config, pump_phase) - np.angle(probe_values))


def _analytic_values(values, config, relax, params, z, pump):
    omega23, pump_phase = _pump_arrays(config, pump, values.shape)
    beta, delta = _coefficient_arrays(omega23, config.omega12, relax, params.alpha)
    scattered = 1j * delta * growth_factor(beta, z) * np.exp(1j * source_phase(config, pump_phase))
    return values * np.exp(-beta * z) + scattered


def _split_rows(fn, values, workers, *extra):
    """Apply ``fn(rows_of_values, *rows_of_extra)`` over row blocks; order-independent."""
    if workers <= 1:
        return fn(values, *extra)
    chunks = np.array_split(np.arange(values.shape[0]), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(
            lambda rows: fn(values[rows], *[e[rows] if e is not None else None for e in extra]),
            chunks))
    return np.concatenate(parts, axis=0)


def _pump_values(pump):
    if pump is None:
        return None
    return pump.values if isinstance(pump, ComplexField) else np.asarray(pump)


def propagate_analytic(field_in: ComplexField, config: CouplingConfig, relax: RelaxationConfig,
                       params: PropagationParams, z: float | None = None, pump=None,
                       workers: int = 1) -> ComplexField:
    """Closed-form probe field after a propagation distance ``z`` (default: L).

    ``pump`` is an optional complex Omega23 field on the same grid; without it
    the pump is uniform with modulus ``config.omega23``.
    """
    z = params.L if z is None else z
    if not 0.0 <= z <= params.L:
        raise ValueError(f"z={z} outside [0, L={params.L}]")
    out = _split_rows(lambda v, p: _analytic_values(v, config, relax, params, z, p),
                      field_in.values, workers, _pump_values(pump))
    return ComplexField(field_in.grid, out)


class StepSizeWarning(RuntimeWarning):
    pass


def _rk4_values(values, config, relax, params, n_steps, pump):
    omega23, pump_phase = _pump_arrays(config, pump, values.shape)
    phase_factor = np.exp(1j * source_phase(config, pump_phase))

    def deriv(omega13):
        # lab-frame weak-probe rho13, re-evaluated for the current probe field
        return 1j * params.alpha * probe_coherence(omega13, omega23, config.omega12,
                                                   phase_factor, relax)

    h = params.L / n_steps
    y = np.array(values, dtype=complex)
    for _ in range(n_steps):
        k1 = deriv(y)
        k2 = deriv(y + 0.5 * h * k1)
        k3 = deriv(y + 0.5 * h * k2)
        k4 = deriv(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def propagate_numeric(field_in: ComplexField, config: CouplingConfig, relax: RelaxationConfig,
                      params: PropagationParams, pump=None, workers: int = 1,
                      check: bool = True, check_tol: float = 1e-6) -> ComplexField:
    """Fixed-step RK4 integration of dOmega13/dz = i alpha rho13 over [0, L].

    With ``check`` a half-resolution run is compared against the full one and
    a :class:`StepSizeWarning` is issued when they disagree by more than
    ``check_tol`` relative to the field scale.
    """
    pv = _pump_values(pump)
    out = _split_rows(lambda v, p: _rk4_values(v, config, relax, params, params.n_z, p),
                      field_in.values, workers, pv)
    if check:
        coarse = _split_rows(lambda v, p: _rk4_values(v, config, relax, params, params.n_z // 2, p),
                             field_in.values, workers, pv)
        scale = max(np.abs(out).max(), 1e-300)
        disagreement = np.abs(out - coarse).max() / scale
        if disagreement > check_tol:
            warnings.warn(
                f"n_z={params.n_z} too small: halved-step run differs by {disagreement:.2e}",
                StepSizeWarning, stacklevel=2,
            )
    return ComplexField(field_in.grid, out)


def relative_deviation(a: ComplexField, b: ComplexField) -> float:
    """max |a - b| / max |b|."""
    return float(np.abs(a.values - b.values).max() / max(np.abs(b.values).max(), 1e-300))


@dataclass(frozen=True)
class ScalarMap:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_y, self.grid.n_x):
            raise ValueError("map shape does not match grid")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class IntensityMap(ScalarMap):
    def normalized(self, peak: float) -> "IntensityMap":
        return IntensityMap(self.grid, self.values / peak if peak > 0 else self.values)


@dataclass(frozen=True)
class PhaseMap(ScalarMap):
    valid: np.ndarray | None = field(default=None, repr=False)


def intensity_map(field_: ComplexField) -> IntensityMap:
    v = field_.values
    return IntensityMap(field_.grid, v.real**2 + v.imag**2)


def phase_map(field_: ComplexField, reference: ComplexField | None = None,
              zero_tol: float = 0.0) -> PhaseMap:
    """Full-quadrant phase in (-pi, pi].

    With ``reference`` the phase is measured relative to the reference pixel's
    phase (pixels where the reference vanishes keep their absolute phase).
    Pixels with |field|^2 <= ``zero_tol`` get phase 0 and ``valid = False``.
    """
    v = field_.values
    if reference is not None:
        ref = reference.values
        mag = np.abs(ref)
        unit = np.where(mag > 0, np.conj(ref) / np.where(mag > 0, mag, 1.0), 1.0)
        v = v * unit
    phase = np.angle(v)
    phase = np.where(phase <= -math.pi, math.pi, phase)
    valid = (v.real**2 + v.imag**2) > zero_tol
    return PhaseMap(field_.grid, np.where(valid, phase, 0.0), valid)


def intensity_expansion(probe_modulus, loop_phase, omega23, omega12, relax: RelaxationConfig,
                        alpha: float, z: float):
    """Beer-Lambert + interference + scattering terms of the output intensity.

    Returned as a tuple of the three terms; their sum equals |Omega13(z)|^2.
    """
    beta, _ = _coefficient_arrays(omega23, omega12, relax, alpha)
    decay = np.exp(-beta * z)
    loss = -np.expm1(-beta * z)
    coupling = omega23 * omega12 / relax.gamma12
    beer_lambert = probe_modulus**2 * decay**2
    interference = -2.0 * probe_modulus * coupling * decay * loss * np.sin(loop_phase)
    scattering = coupling**2 * loss**2
    return beer_lambert, interference, scattering


def phase_formula(probe_modulus, loop_phase, omega23, omega12, relax: RelaxationConfig,
                  alpha: float, z: float):
    """Output phase relative to the local probe phase, two-argument form."""
    beta, _ = _coefficient_arrays(omega23, omega12, relax, alpha)
    loss = -np.expm1(-beta * z)
    b = omega12 * omega23 * loss * np.sin(loop_phase)
    num = omega12 * omega23 * loss * np.cos(loop_phase)
    den = relax.gamma12 * probe_modulus * np.exp(-beta * z) - b
    return np.arctan2(num, den)


# ---- lobe analysis -------------------------------------------------------

def _fractional_index(grid: GridSpec, x, y):
    cx, cy = grid.center
    px, py = grid.pitch
    col = (x - cx + grid.half_extent) / px - 0.5
    row = (y - cy + grid.half_extent) / py - 0.5
    return row, col


def ring_profile(map_: ScalarMap, ring_radius: float, n_theta: int = 720,
                 center: tuple[float, float] | None = None):
    """Bilinear samples of the map on a circle; returns (theta, values)."""
    grid = map_.grid
    if ring_radius <= 0:
        raise ValueError("ring radius must be > 0")
    cx, cy = grid.center if center is None else center
    if ring_radius >= grid.half_extent:
        raise ValueError(f"ring radius {ring_radius} not inside grid half extent {grid.half_extent}")
    theta = TWO_PI * np.arange(n_theta) / n_theta
    row, col = _fractional_index(grid, cx + ring_radius * np.cos(theta), cy + ring_radius * np.sin(theta))
    values = ndimage.map_coordinates(map_.values, [row, col], order=1, mode="nearest")
    return theta, values


def _interpolation_bound(map_: ScalarMap, ring_radius, n_theta, center):
    """Upper bound on the bilinear interpolation error along the ring."""
    v = np.asarray(map_.values)
    dxx = np.zeros_like(v)
    dyy = np.zeros_like(v)
    dxx[:, 1:-1] = np.abs(v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2])
    dyy[1:-1, :] = np.abs(v[2:, :] - 2 * v[1:-1, :] + v[:-2, :])
    # widen by one pixel so each sample sees the curvature of its whole cell
    curv = ndimage.maximum_filter(dxx + dyy, size=3)
    _, c = ring_profile(ScalarMap(map_.grid, curv), ring_radius, n_theta, center)
    return float(c.max()) / 8.0


def _refine(values, idx):
    n = values.size
    y0, ym, yp = values[idx], values[(idx - 1) % n], values[(idx + 1) % n]
    denom = ym - 2 * y0 + yp
    return 0.0 if denom == 0 else 0.5 * (ym - yp) / denom


def _prune(prof, floor):
    """Alternating max/min sequence with every swing larger than ``floor``.

    Starts from all strict local extrema of the periodic profile and
    repeatedly drops the adjacent max/min pair with the smallest swing.
    """
    n = prof.size
    left, right = np.roll(prof, 1), np.roll(prof, -1)
    ext = [(k, "max") for k in np.flatnonzero((prof >= left) & (prof > right))]
    ext += [(k, "min") for k in np.flatnonzero((prof <= left) & (prof < right))]
    ext.sort()
    # collapse runs of the same kind, keeping the most extreme member
    merged = []
    for k, kind in ext:
        if merged and merged[-1][1] == kind:
            j = merged[-1][0]
            better = prof[k] > prof[j] if kind == "max" else prof[k] < prof[j]
            if better:
                merged[-1] = (k, kind)
        else:
            merged.append((k, kind))
    if len(merged) > 1 and merged[0][1] == merged[-1][1]:
        k0, kind = merged[0]
        j = merged[-1][0]
        better = prof[j] > prof[k0] if kind == "max" else prof[j] < prof[k0]
        merged = merged[1:] if better else merged[:-1]
    while len(merged) >= 2:
        swings = [abs(prof[merged[i][0]] - prof[merged[(i + 1) % len(merged)][0]])
                  for i in range(len(merged))]
        i = int(np.argmin(swings))
        if swings[i] > floor:
            break
        j = (i + 1) % len(merged)
        for idx in sorted((i, j), reverse=True):
            merged.pop(idx)
    return merged if len(merged) >= 2 else []


def lobe_angles(map_: ScalarMap, ring_radius: float, n_theta: int = 720,
                noise_floor: float = 1e-9, center=None) -> list[tuple[float, str]]:
    """Angular extrema of the map along a circle, sorted by angle.

    The bilinear ring profile is smoothed over one pixel of arc length so the
    square-grid interpolation ripple does not split lobes. Swings smaller than
    the larger of ``noise_floor * max|I|`` and twice the interpolation error
    bound are discarded; a profile with nothing left gives an empty list.
    """
    theta, prof = ring_profile(map_, ring_radius, n_theta, center)
    scale = float(np.abs(prof).max())
    if scale == 0.0:
        return []
    floor = max(noise_floor * scale, 2.0 * _interpolation_bound(map_, ring_radius, n_theta, center))
    if prof.max() - prof.min() <= floor:
        return []
    step = TWO_PI / n_theta
    sigma = max(map_.grid.pitch) / (ring_radius * step)
    smooth = ndimage.gaussian_filter1d(prof, sigma, mode="wrap") if sigma >= 0.5 else prof
    found = []
    for k, kind in _prune(smooth, floor):
        shift = _refine(smooth if kind == "max" else -smooth, k)
        found.append((wrap_phase(theta[k] + shift * step), kind))
    return sorted(found)


def visibility(map_: ScalarMap, ring_radius: float, n_theta: int = 720, center=None) -> float:
    """(Imax - Imin) / (Imax + Imin) on the ring; 0 when the ring is flat to within
    the bilinear interpolation error."""
    _, prof = ring_profile(map_, ring_radius, n_theta, center)
    hi, lo = float(prof.max()), float(prof.min())
    if hi + lo <= 0.0:
        return 0.0
    if hi - lo <= 2.0 * _interpolation_bound(map_, ring_radius, n_theta, center):
        return 0.0
    return (hi - lo) / (hi + lo)


def brightest_lobe(map_: ScalarMap, ring_radius: float, n_theta: int = 720, center=None):
    """Angle of the largest maximum on the ring, or None when the ring is flat."""
    lobes = [a for a, kind in lobe_angles(map_, ring_radius, n_theta, center=center) if kind == "max"]
    if not lobes:
        return None
    theta, prof = ring_profile(map_, ring_radius, n_theta, center)
    idx = np.rint(np.asarray(lobes) / (TWO_PI / n_theta)).astype(int) % n_theta
    return lobes[int(np.argmax(prof[idx]))]


# ---- full scene ----------------------------------------------------------

@dataclass(frozen=True)
class Scene:
    """Probe and pump beams, couplings, medium and sampling grid.

    ``coupling.omega13`` and ``coupling.omega23`` are the peak Rabi
    frequencies of the probe and pump; the mode amplitudes are rescaled so
    that the beams reach those peaks.
    """

    probe: LGModeSpec = LGModeSpec(l=1)
    pump: LGModeSpec = LGModeSpec(l=0)
    coupling: CouplingConfig = CouplingConfig()
    relax: RelaxationConfig = field(default_factory=RelaxationConfig)
    params: PropagationParams = PropagationParams()
    grid: GridSpec = GridSpec()
    z_beam: float = 0.0

    @property
    def probe_beam(self) -> LGModeSpec:
        return self.probe.with_peak(self.coupling.omega13)

    @property
    def pump_beam(self) -> LGModeSpec:
        return self.pump.with_peak(self.coupling.omega23)

    def probe_at(self, x, y):
        return evaluate_xy(self.probe_beam, x, y, self.z_beam)

    def pump_at(self, x, y):
        return evaluate_xy(self.pump_beam, x, y, self.z_beam)

    def output_at(self, x, y, z: float | None = None):
        """Analytic output probe at arbitrary transverse points."""
        z = self.params.L if z is None else z
        probe = np.asarray(self.probe_at(x, y))
        return _analytic_values(probe, self.coupling, self.relax, self.params, z,
                                np.asarray(self.pump_at(x, y)))

    def input_field(self) -> ComplexField:
        X, Y = self.grid.mesh()
        return ComplexField(self.grid, self.probe_at(X, Y))

    def pump_field(self) -> ComplexField:
        X, Y = self.grid.mesh()
        return ComplexField(self.grid, self.pump_at(X, Y))

    def output_field(self, z: float | None = None, workers: int = 1) -> ComplexField:
        return propagate_analytic(self.input_field(), self.coupling, self.relax, self.params,
                                  z, pump=self.pump_field(), workers=workers)

    def ring_radius(self) -> float:
        return self.probe.ring_radius()

    def with_(self, **changes) -> "Scene":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass
class Rendering:
    scene: Scene
    input: ComplexField
    output: ComplexField
    input_intensity: IntensityMap
    output_intensity: IntensityMap
    input_phase: PhaseMap
    output_phase: PhaseMap
    relative_phase: PhaseMap


def render(scene: Scene, z: float | None = None, workers: int = 1) -> Rendering:
    field_in = scene.input_field()
    field_out = propagate_analytic(field_in, scene.coupling, scene.relax, scene.params, z,
                                   pump=scene.pump_field(), workers=workers)
    return Rendering(
        scene=scene,
        input=field_in,
        output=field_out,
        input_intensity=intensity_map(field_in),
        output_intensity=intensity_map(field_out),
        input_phase=phase_map(field_in),
        output_phase=phase_map(field_out),
        relative_phase=phase_map(field_out, reference=field_in),
    )
