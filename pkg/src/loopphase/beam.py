"""Laguerre-Gaussian mode evaluation and sampling onto square field grids.

Lengths are in arbitrary but consistent units (the CLI uses micrometres).
Field amplitudes are Rabi frequencies in units of the probe coherence decay
rate gamma13.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize


@dataclass(frozen=True)
class LGModeSpec:
    """Paraxial Laguerre-Gaussian mode LG^l_m.

    ``amplitude`` multiplies the unit-norm mode function, so the field is
    ``amplitude * f(r, theta)``. Use :meth:`with_peak` to build a spec whose
    largest modulus equals a given Rabi frequency.
    """

    l: int = 0
    m: int = 0
    w0: float = 100.0
    wavelength: float = 0.78
    amplitude: float = 1.0

    def __post_init__(self):
        if int(self.l) != self.l or int(self.m) != self.m:
            raise ValueError("l and m must be integers")
        if self.m < 0:
            raise ValueError(f"radial index m must be >= 0, got {self.m}")
        for name in ("w0", "wavelength"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and > 0, got {value}")
        if not (math.isfinite(self.amplitude) and self.amplitude >= 0):
            raise ValueError(f"amplitude must be finite and >= 0, got {self.amplitude}")

    @property
    def rayleigh_range(self) -> float:
        return math.pi * self.w0**2 / self.wavelength

    @property
    def norm_constant(self) -> float:
        """sqrt(2 m! / (pi (m+|l|)!)), without the 1/w(z) factor."""
        l, m = abs(self.l), self.m
        return math.sqrt(2.0 * math.factorial(m) / (math.pi * math.factorial(m + l)))

    def ring_radius(self) -> float:
        """Radius of the intensity maximum of an LG^l_0 donut, w0 sqrt(|l|/2)."""
        return self.w0 * math.sqrt(abs(self.l) / 2.0)

    def peak_modulus(self) -> float:
        """Largest |f| over the transverse plane at z = 0, for unit amplitude."""
        unit = LGModeSpec(self.l, self.m, self.w0, self.wavelength, 1.0)
        if self.m == 0:
            return abs(evaluate_mode(unit, self.ring_radius(), 0.0))
        # the outermost-from-centre lobe is not always the largest for m > 0,
        # so scan first and polish the best bracket
        r = np.linspace(0.0, 4.0 * self.w0 * math.sqrt(self.m + abs(self.l) + 1), 4001)
        vals = np.abs(evaluate_mode(unit, r, 0.0))
        k = int(np.argmax(vals))
        lo, hi = r[max(k - 1, 0)], r[min(k + 1, r.size - 1)]
        res = optimize.minimize_scalar(
            lambda x: -abs(evaluate_mode(unit, x, 0.0)),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * self.w0},
        )
        return max(float(-res.fun), float(vals[k]))

    def with_peak(self, peak: float) -> "LGModeSpec":
        """Copy of this spec rescaled so that max |field| equals ``peak``."""
        return LGModeSpec(self.l, self.m, self.w0, self.wavelength, peak / self.peak_modulus())


@dataclass(frozen=True)
class GridSpec:
    """Square sampling window; pixel centres at ``center + (i + 1/2) * pitch - half_extent``."""

    n_x: int = 512
    n_y: int = 512
    half_extent: float = 300.0
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.n_x < 2 or self.n_y < 2:
            raise ValueError(f"grid needs n_x, n_y >= 2, got {self.n_x}x{self.n_y}")
        if not (math.isfinite(self.half_extent) and self.half_extent > 0):
            raise ValueError(f"half_extent must be > 0, got {self.half_extent}")

    @property
    def pitch(self) -> tuple[float, float]:
        return 2 * self.half_extent / self.n_x, 2 * self.half_extent / self.n_y

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        cx, cy = self.center
        x = cx - self.half_extent + (np.arange(self.n_x) + 0.5) * self.pitch[0]
        y = cy - self.half_extent + (np.arange(self.n_y) + 0.5) * self.pitch[1]
        return x, y

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates, shape (n_y, n_x); rows run along y."""
        x, y = self.axes()
        return np.meshgrid(x, y, indexing="xy")


@dataclass(frozen=True)
class ComplexField:
    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != (self.grid.n_y, self.grid.n_x):
            raise ValueError(
                f"values shape {values.shape} does not match grid ({self.grid.n_y}, {self.grid.n_x})"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def laguerre(n: int, alpha: float, x):
    """Generalised Laguerre polynomial L_n^alpha(x) by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if n == 0:
        return prev
    cur = 1.0 + alpha - x
    for k in range(1, n):
        prev, cur = cur, ((2 * k + 1 + alpha - x) * cur - (k + alpha) * prev) / (k + 1)
    return cur


def beam_parameters(spec: LGModeSpec, z: float) -> tuple[float, float, float]:
    """Return (w(z), 1/R(z), Gouy phase) in the standard paraxial form."""
    zr = spec.rayleigh_range
    w = spec.w0 * math.sqrt(1.0 + (z / zr) ** 2)
    inv_r = z / (z**2 + zr**2)  # 1/R with R = z + zR^2/z, finite at z = 0
    gouy = (2 * spec.m + abs(spec.l) + 1) * math.atan2(z, zr)
    return w, inv_r, gouy


def evaluate_mode(spec: LGModeSpec, r, theta, z: float = 0.0):
    """Complex LG amplitude at polar position (r, theta) and axial position z.

    Accepts scalars or broadcastable arrays for ``r`` and ``theta``.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(theta)) and math.isfinite(z)):
        raise ValueError("non-finite input to evaluate_mode")
    if np.any(r < 0):
        raise ValueError("radius must be >= 0")
    l = abs(spec.l)
    w, inv_r, gouy = beam_parameters(spec, z)
    s = r / w
    radial = (
        spec.amplitude * spec.norm_constant / w
        * (math.sqrt(2.0) * s) ** l
        * laguerre(spec.m, l, 2.0 * s**2)
        * np.exp(-s**2)
    )
    if z == 0.0:
        phase = spec.l * theta
    else:
        k = 2 * math.pi / spec.wavelength
        phase = spec.l * theta + k * r**2 * inv_r / 2.0 - gouy
    out = radial * np.exp(1j * phase)
    return out[()] if out.ndim == 0 else out


def evaluate_xy(spec: LGModeSpec, x, y, z: float = 0.0):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return evaluate_mode(spec, np.hypot(x, y), np.arctan2(y, x), z)


def sample_field(spec: LGModeSpec, grid: GridSpec, z: float = 0.0, workers: int = 1) -> ComplexField:
    """Sample the mode at every pixel centre of ``grid``.

    ``workers`` splits the rows across threads; the result does not depend on it.
    """
    X, Y = grid.mesh()
    if workers <= 1:
        return ComplexField(grid, evaluate_xy(spec, X, Y, z))
    chunks = np.array_split(np.arange(grid.n_y), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda rows: evaluate_xy(spec, X[rows], Y[rows], z), chunks))
    return ComplexField(grid, np.concatenate(parts, axis=0))


class QuadratureError(RuntimeError):
    pass


def mode_norm(spec: LGModeSpec, z: float = 0.0, tol: float = 1e-12) -> float:
    """Integral of |f|^2 over the transverse plane by adaptive quadrature.

    The azimuthal integral is exactly 2 pi since |f| does not depend on theta.
    """
    if spec.amplitude != 1.0:
        raise ValueError("mode_norm expects a unit-amplitude spec")
    w = beam_parameters(spec, z)[0]
    upper = w * (6.0 + 2.0 * math.sqrt(spec.m + abs(spec.l) + 1))

    def integrand(r):
        return abs(evaluate_mode(spec, r, 0.0, z)) ** 2 * r

    # break the interval at the Laguerre nodes so the integrator sees smooth pieces
    points = [w * math.sqrt(k / 2.0) for k in range(1, 2 * (spec.m + abs(spec.l)) + 2)]
    value, err = integrate.quad(integrand, 0.0, upper, epsabs=tol, epsrel=tol,
                                limit=500, points=points)
    if not math.isfinite(value) or err > 1e-8:
        raise QuadratureError(f"quadrature did not converge: value={value}, err={err}")
    return 2.0 * math.pi * value
