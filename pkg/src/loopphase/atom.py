"""Closed-loop three-level atom: Hamiltonians, spectrum, dark state, Bloch equations.

Basis ordering is (|1>, |2>, |3>). Rates and Rabi frequencies are in units of
gamma13.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_phase(phi):
    """Wrap to [0, 2 pi)."""
    out = np.mod(phi, TWO_PI)
    # mod can return exactly 2 pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class CouplingConfig:
    omega12: float = 0.1
    omega23: float = 5.0
    omega13: float = 0.1
    phi12: float = 0.0
    phi23: float = 0.0
    phi13: float = 0.0

    def __post_init__(self):
        for name in ("omega12", "omega23", "omega13"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        for name in ("phi12", "phi23", "phi13"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def loop_phase(self) -> float:
        return wrap_phase(self.phi12 + self.phi23 - self.phi13)

    @property
    def rabi_norm(self) -> float:
        return math.sqrt(self.omega12**2 + self.omega23**2 + self.omega13**2)

    @classmethod
    def from_loop_phase(cls, omega12, omega23, omega13, loop_phase) -> "CouplingConfig":
        return cls(omega12, omega23, omega13, phi12=loop_phase)


@dataclass(frozen=True)
class RelaxationConfig:
    """Decay rates. ``Gamma`` feeds |1> and |2> from |3> (|3> empties at 2 Gamma)."""

    Gamma: float = 1.0
    gamma12: float = 1e-3
    gamma13: float = 1.0
    gamma23: float | None = None

    def __post_init__(self):
        if self.gamma23 is None:
            object.__setattr__(self, "gamma23", 0.5 * (self.gamma13 + self.gamma12))
        for name in ("Gamma", "gamma12", "gamma13", "gamma23"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if self.gamma12 > 0.1 * self.gamma13:
            warnings.warn(
                f"gamma12={self.gamma12} is not small compared with gamma13={self.gamma13}",
                stacklevel=3,
            )


def effective_width(omega23, relax: RelaxationConfig):
    """Weak-probe width gamma12 + |Omega23|^2 / gamma13."""
    return relax.gamma12 + np.abs(omega23) ** 2 / relax.gamma13


def build_hamiltonian_full(config: CouplingConfig) -> np.ndarray:
    c = config
    h12 = c.omega12 * np.exp(1j * c.phi12)
    h13 = c.omega13 * np.exp(1j * c.phi13)
    h23 = c.omega23 * np.exp(1j * c.phi23)
    return np.array([
        [0, h12, h13],
        [np.conj(h12), 0, h23],
        [np.conj(h13), np.conj(h23), 0],
    ], dtype=complex)


def gauge_unitary(config: CouplingConfig) -> np.ndarray:
    """U with U H_full U^dagger = H_reduced."""
    return np.diag(np.exp(-1j * np.array([config.phi13, config.phi23, 0.0])))


def build_hamiltonian_reduced(config: CouplingConfig) -> np.ndarray:
    c = config
    h12 = c.omega12 * np.exp(1j * c.loop_phase)
    return np.array([
        [0, h12, c.omega13],
        [np.conj(h12), 0, c.omega23],
        [c.omega13, c.omega23, 0],
    ], dtype=complex)


def characteristic_residual(lam, config: CouplingConfig):
    """Residual of Lambda (S - Lambda^2) + 2 P cos(Phi), S = sum Omega^2, P = prod Omega."""
    c = config
    s = c.rabi_norm**2
    p = c.omega12 * c.omega23 * c.omega13
    lam = np.asarray(lam, dtype=float)
    return lam * (s - lam**2) + 2 * p * math.cos(c.loop_phase)


def depressed_cubic_roots(p, q, clamp: float = 1e-12) -> np.ndarray:
    """Real roots of t^3 + p t + q = 0 (p <= 0, three real roots), ascending.

    Trigonometric form; broadcasts over array ``p``/``q`` with roots on the
    last axis. The arccos argument is clamped when it overshoots [-1, 1] by
    less than ``clamp`` (degenerate pairs).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p > 0):
        raise ValueError("depressed cubic has complex roots for p > 0")
    m = 2.0 * np.sqrt(-p / 3.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        arg = np.where(m > 0, 3.0 * q / (p * np.where(m > 0, m, 1.0)), 0.0)
    if np.any(np.abs(arg) - 1.0 > clamp):
        raise ValueError("arccos argument outside [-1, 1]: cubic has complex roots")
    base = np.arccos(np.clip(arg, -1.0, 1.0)) / 3.0
    k = np.arange(3)
    roots = m[..., None] * np.cos(base[..., None] - TWO_PI * k / 3.0)
    # p == 0 leaves the single triple root -cbrt(q)
    roots = np.where((m == 0)[..., None], -np.cbrt(q)[..., None], roots)
    return np.sort(roots, axis=-1)


def spectrum_from_invariants(s, p, cos_phi) -> np.ndarray:
    """Roots of Lambda^3 - s Lambda - 2 p cos(Phi) = 0, polished by one Newton step."""
    s = np.asarray(s, dtype=float)
    c0 = 2.0 * np.asarray(p, dtype=float) * np.asarray(cos_phi, dtype=float)
    roots = depressed_cubic_roots(-s, -c0)
    s_ = s[..., None]
    c_ = c0[..., None] if np.ndim(c0) else c0
    resid = roots * (s_ - roots**2) + c_
    slope = s_ - 3.0 * roots**2
    ok = np.abs(slope) > 1e-8 * np.maximum(s_, 1e-300)
    roots = np.where(ok, roots - resid / np.where(ok, slope, 1.0), roots)
    return np.sort(roots, axis=-1)


def eigen_spectrum(config: CouplingConfig) -> np.ndarray:
    """Three real eigenvalues of the loop Hamiltonian, ascending.

    The characteristic polynomial Lambda^3 - S Lambda - 2 P cos(Phi) has no
    quadratic term (zero-diagonal Hamiltonian), so it is already depressed.
    """
    c = config
    s = c.rabi_norm**2
    p = c.omega12 * c.omega23 * c.omega13
    return spectrum_from_invariants(s, p, math.cos(c.loop_phase))


class NoDarkStateError(ValueError):
    pass


def dark_state(config: CouplingConfig, tol: float = 1e-9) -> np.ndarray:
    """Zero-energy eigenvector of the reduced Hamiltonian, defined when cos(Phi) = 0.

    Phi = pi/2 gives (-i W23, i W13, W12)/N; Phi = 3 pi/2 the complex conjugate,
    so the |3> amplitude is always real and non-negative.
    """
    c = config
    phi = c.loop_phase
    if abs(math.cos(phi)) > tol:
        raise NoDarkStateError(f"no dark state for loop phase {phi:.6g} (cos = {math.cos(phi):.3g})")
    norm = c.rabi_norm
    if norm == 0.0:
        raise NoDarkStateError("all Rabi frequencies are zero")
    s = 1j if math.sin(phi) > 0 else -1j
    return np.array([-s * c.omega23, s * c.omega13, c.omega12], dtype=complex) / norm


def bloch_rhs(rho: np.ndarray, config: CouplingConfig, relax: RelaxationConfig,
              sign: int = 1) -> np.ndarray:
    """Time derivative of the density matrix in the gauge-reduced frame.

    The coherent terms are those of rho_dot = sign * i [H', rho]. The default
    ``sign=+1`` is the closed-loop Bloch system as usually printed, i.e. the
    Liouville equation for the dipole Hamiltonian -H'. rho_dot_33 follows from
    trace conservation and the lower triangle from Hermiticity.
    """
    if sign not in (-1, 1):
        raise ValueError("sign must be +1 or -1")
    r = np.asarray(rho, dtype=complex)
    c, g = config, relax
    w12, w13, w23 = c.omega12, c.omega13, c.omega23
    e = np.exp(1j * c.loop_phase)
    ec = np.conj(e)
    k = 1j * sign  # printed equations carry +i on every coherent term

    d11 = k * w12 * (e * r[1, 0] - ec * r[0, 1]) + k * w13 * (r[2, 0] - r[0, 2]) + g.Gamma * r[2, 2]
    d22 = k * w12 * (ec * r[0, 1] - e * r[1, 0]) + k * w23 * (r[2, 1] - r[1, 2]) + g.Gamma * r[2, 2]
    d12 = (k * w12 * (r[1, 1] - r[0, 0]) * e + k * w13 * r[2, 1] - k * w23 * r[0, 2]
           - g.gamma12 * r[0, 1])
    d13 = (k * w13 * (r[2, 2] - r[0, 0]) + k * w12 * e * r[1, 2] - k * w23 * r[0, 1]
           - g.gamma13 * r[0, 2])
    d23 = (k * w23 * (r[2, 2] - r[1, 1]) + k * w12 * ec * r[0, 2] - k * w13 * r[1, 0]
           - g.gamma23 * r[1, 2])
    d33 = -d11 - d22
    return np.array([
        [d11, d12, d13],
        [np.conj(d12), d22, d23],
        [np.conj(d13), np.conj(d23), d33],
    ], dtype=complex)


class SingularSystemError(np.linalg.LinAlgError):
    pass


def _liouvillian(config: CouplingConfig, relax: RelaxationConfig, sign: int):
    """Real matrix of the linear map rho -> bloch_rhs(rho), plus the basis used.

    bloch_rhs rebuilds the lower triangle by conjugation, which is only linear
    on Hermitian inputs, so the map is assembled on the Hermitian basis
    {E_kk, E_jk + E_kj, i(E_jk - E_kj)} with real coefficients.
    """
    basis = []
    for j in range(3):
        for k in range(j, 3):
            a = np.zeros((3, 3), complex)
            if j == k:
                a[j, j] = 1
                basis.append(a)
            else:
                a[j, k] = a[k, j] = 1
                basis.append(a)
                b = np.zeros((3, 3), complex)
                b[j, k], b[k, j] = 1j, -1j
                basis.append(b)
    cols = [bloch_rhs(b, config, relax, sign).ravel() for b in basis]
    coeff = np.column_stack([np.concatenate([c.real, c.imag]) for c in cols])
    return coeff, basis


def steady_state(config: CouplingConfig, relax: RelaxationConfig, sign: int = 1,
                 rcond: float = 1e-12) -> np.ndarray:
    """Stationary density matrix from {bloch_rhs(rho) = 0, tr rho = 1}.

    The 9 real Hermitian parameters are solved by least squares on the 18 real
    equations plus the trace row. When every field is off the stationary set
    is degenerate and rho = diag(1, 0, 0) is returned.
    """
    c = config
    coeff, basis = _liouvillian(c, relax, sign)
    trace_row = np.array([np.trace(b).real for b in basis])
    a = np.vstack([coeff, trace_row])
    rhs = np.zeros(a.shape[0])
    rhs[-1] = 1.0
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] < rcond * sv[0]:
        if c.omega12 == c.omega13 == c.omega23 == 0.0:
            return np.diag([1.0, 0.0, 0.0]).astype(complex)
        raise SingularSystemError(
            f"steady-state system is rank deficient (smallest singular value {sv[-1]:.3g})"
        )
    x, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    rho = sum(xi * b for xi, b in zip(x, basis))
    return 0.5 * (rho + rho.conj().T)


def steady_probe_coherence(config: CouplingConfig, relax: RelaxationConfig) -> complex:
    """Exact stationary probe coherence, in the sign convention of the weak-probe formula.

    :func:`bloch_rhs` evolves under -H', so its rho13 drives the probe with the
    opposite sign to the weak-probe rho13 (which enters dOmega13/dz = i alpha rho13
    and must be absorptive). Both terms of the weak-probe result flip together.
    """
    return -complex(steady_state(config, relax, sign=1)[0, 2])


def probe_coherence(omega13, omega23, omega12, loop_factor, relax: RelaxationConfig):
    """Vectorised weak-probe rho13.

    ``loop_factor`` is e^{i Phi} (or any complex source phase factor); inputs
    broadcast, and ``omega13`` may be complex.
    """
    width = effective_width(omega23, relax)
    return (1j * relax.gamma12 * omega13 + omega12 * omega23 * loop_factor) / (relax.gamma13 * width)


def weak_probe_coherence(config: CouplingConfig, relax: RelaxationConfig) -> complex:
    """rho13 to first order in the probe, with rho11 = 1."""
    c = config
    if c.omega23 > 0 and c.omega13 / c.omega23 > 0.1:
        warnings.warn(
            f"weak-probe formula used with omega13/omega23 = {c.omega13 / c.omega23:.3g} > 0.1",
            stacklevel=2,
        )
    return complex(probe_coherence(c.omega13, c.omega23, c.omega12,
                                   np.exp(1j * c.loop_phase), relax))
