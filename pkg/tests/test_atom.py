import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from loopphase.atom import (CouplingConfig, NoDarkStateError, RelaxationConfig, bloch_rhs,
                            build_hamiltonian_full, build_hamiltonian_reduced, characteristic_residual,
                            dark_state, depressed_cubic_roots, effective_width, eigen_spectrum,
                            gauge_unitary, steady_probe_coherence, steady_state,
                            weak_probe_coherence, wrap_phase)

mag = st.floats(0.01, 10.0)
ang = st.floats(-20.0, 20.0)


def random_hermitian(rng):
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    return (a + a.conj().T) / 2


def test_loop_phase_wrapped():
    c = CouplingConfig(phi12=3.0, phi23=4.0, phi13=0.5)
    assert c.loop_phase == pytest.approx(6.5 - 2 * math.pi)
    assert 0 <= CouplingConfig(phi13=1.0).loop_phase < 2 * math.pi


def test_coupling_validation():
    with pytest.raises(ValueError):
        CouplingConfig(omega12=-1.0)
    with pytest.raises(ValueError):
        CouplingConfig(phi12=float("inf"))


def test_relaxation_defaults_and_warning():
    r = RelaxationConfig()
    assert r.gamma23 == pytest.approx((1.0 + 1e-3) / 2)
    with pytest.raises(ValueError):
        RelaxationConfig(gamma12=0.0)
    with pytest.warns(UserWarning):
        RelaxationConfig(gamma12=0.5)


def test_full_hamiltonian_examples():
    assert np.all(build_hamiltonian_full(CouplingConfig(0, 0, 0)) == 0)
    h = build_hamiltonian_full(CouplingConfig(0, 0, 1.0, phi13=math.pi))
    assert h[0, 2] == pytest.approx(-1.0)
    assert np.allclose(np.diag(h), 0)


@settings(max_examples=60)
@given(mag, mag, mag, ang, ang, ang)
def test_reduced_is_unitarily_equivalent(w12, w23, w13, p12, p23, p13):
    c = CouplingConfig(w12, w23, w13, p12, p23, p13)
    full, red = build_hamiltonian_full(c), build_hamiltonian_reduced(c)
    u = gauge_unitary(c)
    assert np.abs(u @ full @ u.conj().T - red).max() < 1e-12 * max(1.0, c.rabi_norm)
    assert np.allclose(red, red.conj().T)
    ev = np.linalg.eigvalsh(full)
    assert np.abs(ev - np.linalg.eigvalsh(red)).max() < 1e-12 * max(1.0, c.rabi_norm)
    assert np.abs(eigen_spectrum(c) - ev).max() < 1e-11 * max(1.0, c.rabi_norm)


def test_reduced_examples():
    h = build_hamiltonian_reduced(CouplingConfig(0.3, 0.7, 1.1))
    assert np.all(h.imag == 0)
    a = build_hamiltonian_reduced(CouplingConfig(1, 2, 3, phi12=0.4))
    b = build_hamiltonian_reduced(CouplingConfig(1, 2, 3, phi12=0.4 + 2 * math.pi))
    assert np.abs(a - b).max() < 1e-15


@settings(max_examples=100)
@given(mag, mag, mag, st.floats(0, 2 * math.pi))
def test_spectrum_invariants(w12, w23, w13, phi):
    c = CouplingConfig(w12, w23, w13, phi12=phi)
    lam = eigen_spectrum(c)
    scale = c.rabi_norm**3
    assert np.all(np.diff(lam) >= 0)
    assert abs(lam.sum()) < 1e-12 * max(1.0, c.rabi_norm)
    assert np.abs(characteristic_residual(lam, c)).max() < 1e-10 * max(1.0, scale)
    mirror = eigen_spectrum(CouplingConfig(w12, w23, w13, phi12=2 * math.pi - phi))
    assert np.abs(mirror - lam).max() < 1e-12 * max(1.0, c.rabi_norm)


def test_spectrum_examples():
    assert np.allclose(eigen_spectrum(CouplingConfig(1, 1, 1)), [-1, -1, 2], atol=1e-10)
    c = CouplingConfig(0.4, 1.3, 2.2, phi12=math.pi / 2)
    lam = eigen_spectrum(c)
    assert np.allclose(lam, [-c.rabi_norm, 0, c.rabi_norm], atol=1e-12)
    lam = eigen_spectrum(CouplingConfig(0.6, 0.8, 0.0, phi12=1.0))
    assert np.allclose(lam, [-1, 0, 1], atol=1e-12)


@pytest.mark.parametrize("phi", [0.0, math.pi])
def test_equal_rabi_degeneracy(phi):
    lam = eigen_spectrum(CouplingConfig(2, 2, 2, phi12=phi))
    gaps = np.diff(lam)
    assert (gaps < 1e-10).sum() == 1


def test_cubic_clamp_and_complex_rejection():
    roots = depressed_cubic_roots(-3.0, -2.0 * (1 + 5e-13))
    assert np.allclose(roots, [-1, -1, 2], atol=1e-6)
    with pytest.raises(ValueError):
        depressed_cubic_roots(1.0, 0.0)
    with pytest.raises(ValueError):
        depressed_cubic_roots(-3.0, 2.1)


def test_dark_state_examples():
    d = dark_state(CouplingConfig(1, 1, 1, phi12=math.pi / 2))
    assert np.allclose(d, np.array([-1j, 1j, 1]) / math.sqrt(3))
    d = dark_state(CouplingConfig(0, 2, 1, phi12=math.pi / 2))
    assert d[2] == 0 and np.allclose(np.abs(d), np.array([2, 1, 0]) / math.sqrt(5))
    d = dark_state(CouplingConfig(0.1, 5, 0.1, phi12=math.pi / 2))
    assert d[0] == pytest.approx(-5j / math.sqrt(25.02))


@settings(max_examples=100)
@given(mag, mag, mag, st.sampled_from([math.pi / 2, 3 * math.pi / 2]), ang, ang)
def test_dark_state_annihilated(w12, w23, w13, phi, a, b):
    c = CouplingConfig(w12, w23, w13, phi12=phi + a, phi23=b, phi13=a + b)
    d = dark_state(c)
    assert abs(np.linalg.norm(d) - 1) < 1e-14
    assert np.linalg.norm(build_hamiltonian_reduced(c) @ d) < 1e-12 * max(1.0, c.rabi_norm)
    assert d[2].imag == 0 and d[2].real >= 0


def test_dark_state_rejections():
    with pytest.raises(NoDarkStateError):
        dark_state(CouplingConfig(1, 1, 1))
    with pytest.raises(NoDarkStateError):
        dark_state(CouplingConfig(0, 0, 0, phi12=math.pi / 2))


def test_bloch_examples():
    r = RelaxationConfig(Gamma=0.7)
    off = CouplingConfig(0, 0, 0)
    assert np.all(bloch_rhs(np.diag([1, 0, 0]).astype(complex), off, r) == 0)
    d = bloch_rhs(np.diag([0, 0, 1]).astype(complex), off, r)
    assert d[0, 0] == pytest.approx(0.7) and d[1, 1] == pytest.approx(0.7)
    assert d[2, 2] == pytest.approx(-1.4)


def test_bloch_trace_free_and_hermitian():
    rng = np.random.default_rng(1)
    for _ in range(20):
        rho = random_hermitian(rng)
        c = CouplingConfig(*rng.uniform(0, 3, 3), *rng.uniform(0, 6, 3))
        d = bloch_rhs(rho, c, RelaxationConfig())
        assert abs(np.trace(d)) < 1e-12
        assert np.allclose(d, d.conj().T)


def test_coherent_part_matches_commutator():
    rng = np.random.default_rng(2)
    c = CouplingConfig(0.3, 1.2, 0.8, phi12=1.1)
    rho = random_hermitian(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tiny = RelaxationConfig(Gamma=1e-300, gamma12=1e-300, gamma13=1e-300, gamma23=1e-300)
        d = bloch_rhs(rho, c, tiny, sign=-1)
    h = build_hamiltonian_reduced(c)
    assert np.abs(d - (-1j) * (h @ rho - rho @ h)).max() < 1e-12


def test_steady_state_is_physical_and_stationary():
    c = CouplingConfig(0.1, 5.0, 0.1, phi12=math.pi / 2)
    r = RelaxationConfig()
    rho = steady_state(c, r)
    assert np.abs(rho - rho.conj().T).max() < 1e-12
    assert abs(np.trace(rho) - 1) < 1e-12
    assert np.linalg.eigvalsh(rho).min() > -1e-10
    assert np.abs(bloch_rhs(rho, c, r)).max() < 1e-10


def test_steady_state_optical_pumping_by_time_integration():
    c = CouplingConfig(0.0, 2.0, 0.0)
    r = RelaxationConfig(gamma12=0.05)
    rho = steady_state(c, r)
    assert rho[0, 0].real == pytest.approx(1.0, abs=1e-10)

    def f(_, y):
        m = (y[:9] + 1j * y[9:]).reshape(3, 3)
        d = bloch_rhs(m, c, r).ravel()
        return np.concatenate([d.real, d.imag])

    start = np.eye(3, dtype=complex).ravel() / 3
    sol = solve_ivp(f, (0, 400), np.concatenate([start.real, start.imag]), rtol=1e-10, atol=1e-12)
    final = (sol.y[:9, -1] + 1j * sol.y[9:, -1]).reshape(3, 3)
    assert np.abs(final - rho).max() < 1e-6


def test_steady_state_all_fields_off():
    rho = steady_state(CouplingConfig(0, 0, 0), RelaxationConfig())
    assert np.allclose(rho, np.diag([1, 0, 0]))


def test_weak_probe_examples():
    r = RelaxationConfig()
    width = effective_width(5.0, r)
    assert width == pytest.approx(25.001)
    rho = weak_probe_coherence(CouplingConfig(0, 5, 0.1), r)
    assert rho == pytest.approx(1j * 1e-3 * 0.1 / width)
    rho = weak_probe_coherence(CouplingConfig(0.1, 5, 0, phi12=0.8), r)
    assert rho == pytest.approx(0.1 * 5 * np.exp(0.8j) / width)


@pytest.mark.parametrize("w13", [0.01, 0.1])
def test_weak_probe_vs_steady_state(w13):
    c = CouplingConfig(0.1, 5.0, w13, phi12=math.pi / 2)
    r = RelaxationConfig()
    weak, exact = weak_probe_coherence(c, r), steady_probe_coherence(c, r)
    assert abs(weak - exact) / abs(exact) < 0.01


def test_weak_probe_error_shrinks_with_probe():
    r = RelaxationConfig()

    def err(w13):
        c = CouplingConfig(0.1, 5.0, w13, phi12=0.3)
        return abs(weak_probe_coherence(c, r) - steady_probe_coherence(c, r)) / abs(steady_probe_coherence(c, r))

    assert err(0.01) < err(0.1)


def test_weak_probe_warns_outside_regime():
    with pytest.warns(UserWarning):
        weak_probe_coherence(CouplingConfig(0.1, 1.0, 0.5), RelaxationConfig())


@settings(max_examples=40)
@given(mag, mag, mag, ang, ang, st.floats(-10, 10), st.floats(-10, 10))
def test_gauge_invariance(w12, w23, w13, p12, p23, a, b):
    base = CouplingConfig(w12, w23, w13, p12, p23, 0.0)
    moved = CouplingConfig(w12, w23, w13, p12 + a, p23 + b, a + b)
    assert np.abs(eigen_spectrum(base) - eigen_spectrum(moved)).max() < 1e-12 * max(1, base.rabi_norm)


def test_wrap_phase_range():
    vals = wrap_phase(np.array([-7.0, -1e-18, 0.0, 2 * math.pi, 13.0]))
    assert np.all((vals >= 0) & (vals < 2 * math.pi))
