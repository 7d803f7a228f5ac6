import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from ionlab.physics import (IonState, NormalizationError, PulseParams, TruncationError,
                            apply_pulse, carrier_rotation, free_evolution,
                            measure_qubit_population, rabi_propagator, sideband_rotation)


def qubit_hamiltonian(rabi, phase, detuning):
    # rotating frame, basis (down, up)
    return np.array([[-detuning / 2, rabi / 2 * np.exp(-1j * phase)],
                     [rabi / 2 * np.exp(1j * phase), detuning / 2]])


def rsb_hamiltonian(rabi, eta, phase, detuning, n_max):
    """Full (2, n_max+1) red-sideband Hamiltonian, flattened q*(n_max+1)+n."""
    d = n_max + 1
    H = np.zeros((2 * d, 2 * d), dtype=complex)
    for n in range(n_max):
        dn, up = 0 * d + n + 1, 1 * d + n
        g = rabi * eta * np.sqrt(n + 1) / 2
        H[dn, up] = g * np.exp(-1j * phase)
        H[up, dn] = g * np.exp(1j * phase)
        H[dn, dn] -= detuning / 2
        H[up, up] += detuning / 2
    return H


def rk4(H, psi, t, steps=4000):
    f = lambda y: -1j * H @ y
    h = t / steps
    for _ in range(steps):
        k1 = f(psi)
        k2 = f(psi + h / 2 * k1)
        k3 = f(psi + h / 2 * k2)
        k4 = f(psi + h * k3)
        psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


@pytest.mark.parametrize("rabi,t,phase,det", [
    (2 * np.pi * 14.3e3, 35e-6, 0.0, 0.0),
    (2 * np.pi * 14.3e3, 35e-6, 1.1, 2 * np.pi * 3e3),
    (1.0, 0.0, 0.3, 5.0),
    (0.0, 2.0, 0.0, 1.7),
])
def test_propagator_matches_expm(rabi, t, phase, det):
    U = expm(-1j * qubit_hamiltonian(rabi, phase, det) * t)
    u00, u01, u10, u11 = rabi_propagator(rabi, t, phase, det)
    np.testing.assert_allclose([[u00, u01], [u10, u11]], U, atol=1e-12)


def test_carrier_matches_rk4():
    rabi, t, phase, det = 2 * np.pi * 10e3, 37e-6, 0.4, 2 * np.pi * 2e3
    s = IonState.basis(1, 0, 0)
    out = carrier_rotation(s, PulseParams(rabi, t, phase, det))
    ref = rk4(qubit_hamiltonian(rabi, phase, det), np.array([0, 1], complex), t)
    np.testing.assert_allclose(out.vector, ref, atol=1e-9)


def test_sideband_matches_expm():
    n_max, rabi, eta, t = 6, 2 * np.pi * 250e3, 0.1, 15e-6
    s = IonState.from_components({(1, 0): 0.6, (0, 1): 0.3j, (1, 2): 0.5, (0, 3): -0.2}, n_max)
    p = PulseParams(rabi, t, 0.7, 2 * np.pi * 1e3, kind="red_sideband", lamb_dicke=eta)
    ref = expm(-1j * rsb_hamiltonian(rabi, eta, 0.7, 2 * np.pi * 1e3, n_max) * t) @ s.vector
    np.testing.assert_allclose(sideband_rotation(s, p).vector, ref, atol=1e-12)


def test_rsb_pi_pulse_moves_up0_to_down1():
    p = PulseParams(np.pi / (20e-6 * 0.1), 20e-6, kind="red_sideband", lamb_dicke=0.1)
    out = apply_pulse(IonState.basis(1, 0, 4), p)
    assert out.population(0, 1) == pytest.approx(1.0, abs=1e-12)


def test_ground_state_untouched_by_rsb():
    p = PulseParams(1e6, 3e-5, kind="red_sideband")
    out = apply_pulse(IonState.basis(0, 0, 3), p)
    assert out.population(0, 0) == pytest.approx(1.0)


def test_sideband_refuses_populated_top_level():
    s = IonState.basis(1, 3, 3)
    with pytest.raises(TruncationError):
        sideband_rotation(s, PulseParams(1e6, 1e-5, kind="red_sideband"))


def test_unnormalized_state_rejected():
    with pytest.raises(NormalizationError):
        carrier_rotation(IonState(np.array([[1.0], [1.0]])), PulseParams(1.0, 1.0))


def test_free_evolution_phases():
    s = IonState.from_components({(0, 0): 1, (1, 0): 1, (0, 1): 1}, 2)
    out = free_evolution(s, 0.3, qubit_detuning=2.0, motional_detuning=5.0)
    a = out.amplitudes * np.sqrt(3)
    assert a[0, 0] == pytest.approx(1.0)
    assert a[1, 0] == pytest.approx(np.exp(-0.6j))
    assert a[0, 1] == pytest.approx(np.exp(-1.5j))


def test_ramsey_fringe_closed_form():
    # from down: P(up) = (1 + cos(phi)) / 2 for two pi/2 pulses
    phi = np.linspace(0, 2 * np.pi, 9)
    pi2 = PulseParams(np.pi / 2 / 1e-5, 1e-5)
    s = IonState.basis(0, 0, 0, (phi.size,))
    s = apply_pulse(s, pi2)
    s = apply_pulse(s, PulseParams(np.pi / 2 / 1e-5, 1e-5, phase=phi))
    np.testing.assert_allclose(measure_qubit_population(s), (1 + np.cos(phi)) / 2, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(rabi=st.floats(0, 1e7), t=st.floats(0, 1e-3), phase=st.floats(-10, 10),
       det=st.floats(-1e6, 1e6))
def test_propagator_unitary(rabi, t, phase, det):
    u00, u01, u10, u11 = rabi_propagator(rabi, t, phase, det)
    U = np.array([[u00, u01], [u10, u11]])
    np.testing.assert_allclose(U @ U.conj().T, np.eye(2), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), area=st.floats(0, 20), det=st.floats(-1e5, 1e5))
def test_sideband_preserves_norm(seed, area, det):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 8)) + 1j * rng.normal(size=(2, 8))
    a[:, -1] = 0
    s = IonState(a / np.linalg.norm(a))
    p = PulseParams(area / (1e-5 * 0.1), 1e-5, detuning=det, kind="red_sideband")
    assert float(sideband_rotation(s, p).norm()) == pytest.approx(1.0, abs=1e-12)


def test_batched_equals_single():
    phases = np.array([0.0, 0.5, 2.0])
    s = IonState.basis(1, 0, 0, (3,))
    out = apply_pulse(s, PulseParams(1e5, 1e-5, phase=phases))
    for k, ph in enumerate(phases):
        one = apply_pulse(IonState.basis(1, 0, 0), PulseParams(1e5, 1e-5, phase=ph))
        np.testing.assert_allclose(out.amplitudes[k], one.amplitudes, atol=1e-15)
