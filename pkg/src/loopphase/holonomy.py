"""Eigenstructure on the phase torus, Berry phases and adiabatic transport.

Torus coordinates are u = phi12 + phi23 and v = phi13, so the loop phase is
Phi = u - v. The dark state is transported by rotating the probe and pump
couplings together, H13 -> Omega13 e^{i theta}, H23 -> Omega23 e^{i theta},
which keeps Phi fixed and moves the point (u, v) along the torus diagonal.
That Hamiltonian is U(theta) H' U(theta)^dagger with
U = diag(e^{i theta}, e^{i theta}, 1), whose kernel is U(theta)|D>, i.e. the
|1> and |2> amplitudes of the dark state pick up e^{i theta}.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .atom import TWO_PI, CouplingConfig, dark_state, spectrum_from_invariants, wrap_phase

HALF_PI = 0.5 * math.pi


def _magnitudes(magnitudes):
    w12, w23, w13 = (float(x) for x in magnitudes)
    if min(w12, w23, w13) < 0 or not all(map(math.isfinite, (w12, w23, w13))):
        raise ValueError("Rabi magnitudes must be finite and >= 0")
    return w12, w23, w13


def wrap_signed(phi):
    """Wrap to (-pi, pi]."""
    out = -np.mod(-np.asarray(phi, dtype=float) + math.pi, TWO_PI) + math.pi
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class SpectrumSurface:
    magnitudes: tuple[float, float, float]
    u: np.ndarray
    v: np.ndarray
    sheets: np.ndarray  # (3, n_u, n_v), ascending along the first axis
    zero_set: np.ndarray  # (k, 2) points (u, v) where the middle sheet vanishes
    degeneracies: np.ndarray  # (k, 2) grid points where two sheets touch

    @property
    def resolution(self) -> int:
        return self.u.size


def spectrum_surface(magnitudes, resolution: int = 128, degeneracy_tol: float = 1e-8) -> SpectrumSurface:
    """Eigenvalue sheets over the (u, v) torus sampled at 2 pi k / resolution."""
    if resolution < 16:
        raise ValueError(f"resolution must be >= 16, got {resolution}")
    w12, w23, w13 = _magnitudes(magnitudes)
    u = TWO_PI * np.arange(resolution) / resolution
    v = u.copy()
    U, V = np.meshgrid(u, v, indexing="ij")
    phi = U - V
    s = w12**2 + w23**2 + w13**2
    p = w12 * w23 * w13
    roots = spectrum_from_invariants(np.full(phi.shape, s), np.full(phi.shape, p), np.cos(phi))
    sheets = np.moveaxis(roots, -1, 0)

    # middle-sheet zeros: exact grid zeros plus linear crossings along u (periodic)
    mid = sheets[1]
    scale = max(math.sqrt(s), 1e-300)
    points = [(U[i, j], V[i, j]) for i, j in zip(*np.nonzero(np.abs(mid) < 1e-12 * scale))]
    nxt = np.roll(mid, -1, axis=0)
    cross = (mid * nxt < 0) & (np.abs(mid) >= 1e-12 * scale) & (np.abs(nxt) >= 1e-12 * scale)
    du = TWO_PI / resolution
    for i, j in zip(*np.nonzero(cross)):
        frac = mid[i, j] / (mid[i, j] - nxt[i, j])
        points.append((wrap_phase(u[i] + frac * du), v[j]))
    zero_set = np.array(sorted(points)).reshape(-1, 2)

    gaps = np.minimum(sheets[1] - sheets[0], sheets[2] - sheets[1])
    degenerate = np.argwhere(gaps < degeneracy_tol * scale)
    degeneracies = np.column_stack([u[degenerate[:, 0]], v[degenerate[:, 1]]]) if degenerate.size \
        else np.empty((0, 2))
    return SpectrumSurface((w12, w23, w13), u, v, sheets, zero_set, degeneracies)


@dataclass
class DarkManifold:
    loops: list[np.ndarray]  # closed polylines, rows (u, v), last row repeats the first
    loop_phases: tuple[float, float]
    windings: list[tuple[int, int]]
    min_separation: float  # distance between the loops in the u - v coordinate
    disjoint: bool


def winding_numbers(polyline: np.ndarray) -> tuple[int, int]:
    """Net number of turns in u and v of a closed torus polyline."""
    steps = wrap_signed(np.diff(polyline, axis=0))
    turns = steps.sum(axis=0) / TWO_PI
    return int(round(turns[0])), int(round(turns[1]))


def dark_manifold(resolution: int = 100) -> DarkManifold:
    """The two dark-state loops u - v = pi/2 and u - v = 3 pi/2 on the torus."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    u = TWO_PI * np.arange(resolution + 1) / resolution
    loops = []
    phases = (HALF_PI, 3 * HALF_PI)
    for phi in phases:
        loop = np.column_stack([np.mod(u, TWO_PI), wrap_phase(u - phi)])
        loop[-1] = loop[0]
        loops.append(loop)
    windings = [winding_numbers(loop) for loop in loops]
    d0 = wrap_phase(loops[0][:-1, 0] - loops[0][:-1, 1])
    d1 = wrap_phase(loops[1][:-1, 0] - loops[1][:-1, 1])
    diff = np.abs(wrap_signed(d0[:, None] - d1[None, :]))
    sep = float(diff.min())
    pts0 = {tuple(np.round(p, 12)) for p in loops[0][:-1]}
    pts1 = {tuple(np.round(p, 12)) for p in loops[1][:-1]}
    return DarkManifold(loops, phases, windings, sep, sep > 0 and not (pts0 & pts1))


def berry_phase_closed(magnitudes) -> float:
    """-2 pi (Omega23^2 + Omega13^2) / sum Omega^2, unwrapped."""
    w12, w23, w13 = _magnitudes(magnitudes)
    s = w12**2 + w23**2 + w13**2
    if s == 0.0:
        raise ValueError("all Rabi magnitudes are zero")
    return -TWO_PI * (w23**2 + w13**2) / s


def dark_path_state(magnitudes, theta, loop_phase: float = HALF_PI) -> np.ndarray:
    """|D(theta)> = U(theta)|D>; rows for array ``theta``."""
    w12, w23, w13 = _magnitudes(magnitudes)
    d0 = dark_state(CouplingConfig(w12, w23, w13, phi12=loop_phase))
    rot = np.exp(1j * np.asarray(theta, dtype=float))
    return np.stack([d0[0] * rot, d0[1] * rot, d0[2] * np.ones_like(rot)], axis=-1)


def wilson_phase(states: np.ndarray) -> tuple[float, float]:
    """Discrete holonomy of a closed sequence of states (rows); the loop closes on row 0.

    Returns (raw, wrapped): raw is -sum of the individual overlap angles, which
    tracks the continuum integral when neighbouring states are close in gauge;
    wrapped is the gauge-invariant value -arg prod <D_k|D_k+1> in [0, 2 pi).
    """
    states = np.asarray(states, dtype=complex)
    overlaps = np.einsum("ij,ij->i", states.conj(), np.roll(states, -1, axis=0))
    raw = -float(np.angle(overlaps).sum())
    return raw, wrap_phase(raw)


def berry_phase_wilson(magnitudes, n_samples: int = 10000, reverse: bool = False,
                       loop_phase: float = HALF_PI) -> tuple[float, float]:
    """Gauge-invariant discretised Berry phase along the dark-state loop."""
    if n_samples < 100:
        raise ValueError(f"n_samples must be >= 100, got {n_samples}")
    theta = TWO_PI * np.arange(n_samples) / n_samples
    if reverse:
        theta = -theta
    return wilson_phase(dark_path_state(magnitudes, theta, loop_phase))


def berry_connection(magnitudes, theta, h: float = 1e-5, loop_phase: float = HALF_PI) -> np.ndarray:
    """i <D|d_theta D> by central differences."""
    theta = np.asarray(theta, dtype=float)
    d = dark_path_state(magnitudes, theta, loop_phase)
    dd = (dark_path_state(magnitudes, theta + h, loop_phase)
          - dark_path_state(magnitudes, theta - h, loop_phase)) / (2 * h)
    return (1j * np.einsum("...i,...i->...", d.conj(), dd)).real


@dataclass
class BerryResult:
    gamma_closed: float
    gamma_wilson: float
    dynamical_phase: float
    adiabatic_fidelity: float
    loop_samples: int
    accumulated_phase: float = float("nan")
    geometric_phase: float = float("nan")
    n_steps: int = 0
    total_time: float = float("nan")
    adiabatic: bool = True
    max_norm_drift: float = 0.0
    norm_drift: np.ndarray | None = field(default=None, repr=False)

    @property
    def gamma_closed_mod(self) -> float:
        return wrap_phase(self.gamma_closed)

    @property
    def gamma_wilson_mod(self) -> float:
        return wrap_phase(self.gamma_wilson)

    def as_record(self) -> dict:
        rec = {k: v for k, v in asdict(self).items() if k != "norm_drift"}
        rec["gamma_closed_mod"] = self.gamma_closed_mod
        rec["gamma_wilson_mod"] = self.gamma_wilson_mod
        return rec


class NonAdiabaticWarning(RuntimeWarning):
    pass


def _ramp(kind: str):
    if kind == "linear":
        return lambda s: TWO_PI * s
    if kind == "smooth":
        return lambda s: TWO_PI * np.sin(0.5 * math.pi * s) ** 2
    raise ValueError(f"unknown ramp {kind!r}")


def transported_hamiltonian(magnitudes, theta: float, loop_phase: float = HALF_PI) -> np.ndarray:
    """U(theta) H' U(theta)^dagger: probe and pump couplings rotated by e^{i theta}."""
    w12, w23, w13 = _magnitudes(magnitudes)
    h12 = w12 * np.exp(1j * loop_phase)
    r = np.exp(1j * theta)
    return np.array([
        [0, h12, w13 * r],
        [np.conj(h12), 0, w23 * r],
        [w13 * np.conj(r), w23 * np.conj(r), 0],
    ], dtype=complex)


def adiabatic_evolve(magnitudes, total_time: float = 2000.0, n_steps: int = 200_000,
                     ramp: str = "linear", wilson_samples: int = 10_000,
                     fidelity_threshold: float = 0.99) -> BerryResult:
    """Integrate i dpsi/dt = H(theta(t)) psi around one full loop of the dark state.

    Fixed-step RK4 with the state renormalised after every step; the norm
    error before renormalisation is kept in ``norm_drift``.
    """
    if total_time <= 0 or n_steps < 1:
        raise ValueError("total_time and n_steps must be positive")
    w12, w23, w13 = _magnitudes(magnitudes)
    theta_of = _ramp(ramp)
    h = total_time / n_steps

    h0 = transported_hamiltonian((w12, w23, w13), 0.0)
    static = np.zeros((3, 3), complex)
    static[0, 1], static[1, 0] = h0[0, 1], h0[1, 0]
    upper = np.zeros((3, 3), complex)
    upper[0, 2], upper[1, 2] = w13, w23

    def ham(t):
        r = np.exp(1j * theta_of(t / total_time))
        return static + r * upper + np.conj(r) * upper.T

    psi = dark_path_state((w12, w23, w13), 0.0)
    drift = np.empty(n_steps)
    energy_prev = float(np.vdot(psi, ham(0.0) @ psi).real)
    dyn = 0.0
    for k in range(n_steps):
        t = k * h
        ha, hb, hc = ham(t), ham(t + 0.5 * h), ham(t + h)
        k1 = -1j * (ha @ psi)
        k2 = -1j * (hb @ (psi + 0.5 * h * k1))
        k3 = -1j * (hb @ (psi + 0.5 * h * k2))
        k4 = -1j * (hc @ (psi + h * k3))
        psi = psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        norm = math.sqrt(float(np.vdot(psi, psi).real))
        drift[k] = norm - 1.0
        psi = psi / norm
        energy = float(np.vdot(psi, hc @ psi).real)
        dyn -= 0.5 * h * (energy_prev + energy)
        energy_prev = energy

    d_end = dark_path_state((w12, w23, w13), theta_of(1.0))
    overlap = np.vdot(d_end, psi)
    fidelity = float(abs(overlap) ** 2)
    accumulated = float(np.angle(overlap))
    adiabatic = fidelity >= fidelity_threshold
    if not adiabatic:
        warnings.warn(
            f"non-adiabatic loop: fidelity {fidelity:.4f} < {fidelity_threshold}",
            NonAdiabaticWarning, stacklevel=2,
        )
    return BerryResult(
        gamma_closed=berry_phase_closed((w12, w23, w13)),
        gamma_wilson=berry_phase_wilson((w12, w23, w13), wilson_samples)[0],
        dynamical_phase=dyn,
        adiabatic_fidelity=min(fidelity, 1.0),
        loop_samples=wilson_samples,
        accumulated_phase=wrap_phase(accumulated),
        geometric_phase=wrap_phase(accumulated - dyn),
        n_steps=n_steps,
        total_time=total_time,
        adiabatic=adiabatic,
        max_norm_drift=float(np.abs(drift).max()),
        norm_drift=drift,
    )
