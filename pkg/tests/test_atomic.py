import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionlab.atomic import (CLOCK_LOWER, CLOCK_UPPER, DomainError, HyperfineConstants, LevelLabel,
                           breit_rabi_energy, clock_frequency, clock_sensitivity,
                           extrapolate_zero_field_splitting, field_from_stretch_frequency,
                           stretch_frequency)

C = HyperfineConstants()
K = (C.g_j - C.g_i_prime) * C.mu_b_over_h   # Hz/G


def test_clock_closed_form():
    # m_F = 0: nu * sqrt(1 + x^2) = sqrt(nu^2 + (K b)^2)
    b = np.array([0.0, 0.5, 1.78, 10.0])
    np.testing.assert_allclose(clock_frequency(C, b), np.hypot(C.nu_hf, K * b), rtol=1e-15)


def test_zero_field_levels_degenerate():
    up = [breit_rabi_energy(C, LevelLabel(4, m), 0.0) for m in range(-4, 5)]
    lo = [breit_rabi_energy(C, LevelLabel(3, m), 0.0) for m in range(-3, 4)]
    assert np.ptp(up) == pytest.approx(0, abs=1e-6)
    assert up[0] - lo[0] == pytest.approx(C.nu_hf)


def test_stretch_closed_form():
    # (4,4) is linear in x; (3,3) has radicand 1 + 4*3*x/8 + x^2
    b = np.array([0.0, 1.78, 20.0])
    x = K * b / C.nu_hf
    ref = (C.g_i_prime * C.mu_b_over_h * b
           + C.nu_hf / 2 * (1 + x) + C.nu_hf / 2 * np.sqrt(1 + 1.5 * x + x * x))
    np.testing.assert_allclose(stretch_frequency(C, b), ref, rtol=1e-14)


def test_clock_sensitivity_derivative():
    b = 1.78
    exact = K ** 2 * b / np.hypot(C.nu_hf, K * b)
    assert clock_sensitivity(C, b) == pytest.approx(exact, rel=1e-6)


def test_splitting_closed_form_inversion():
    b = 1.78
    f = float(clock_frequency(C, b))
    assert extrapolate_zero_field_splitting(C, f, b) == pytest.approx(np.sqrt(f**2 - (K * b)**2),
                                                                      abs=0.01)


@settings(max_examples=50, deadline=None)
@given(b=st.floats(0.0, 50.0))
def test_stretch_round_trip(b):
    f = float(stretch_frequency(C, b))
    assert field_from_stretch_frequency(C, f) == pytest.approx(b, abs=1e-6)


def test_stretch_inversion_domain():
    with pytest.raises(DomainError):
        field_from_stretch_frequency(C, C.nu_hf - 1.0)


def test_invalid_labels():
    with pytest.raises(ValueError):
        breit_rabi_energy(C, LevelLabel(4, 5), 1.0)
    with pytest.raises(ValueError):
        breit_rabi_energy(C, LevelLabel(2, 0), 1.0)
    with pytest.raises(ValueError):
        breit_rabi_energy(C, CLOCK_UPPER, -1.0)
    assert CLOCK_LOWER.f == 3
