"""Breit-Rabi structure of a J=1/2 ground level (43Ca+ defaults, I = 7/2).

Energies are in Hz (E/h), fields in gauss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.constants import physical_constants
from scipy.optimize import bisect

# Bohr magneton / h in Hz/G
MU_B_OVER_H = physical_constants["Bohr magneton in Hz/T"][0] * 1e-4

NU_HF_43CA = 3_225_608_286.4
G_J_43CA = 2.00225664
G_I_PRIME_43CA = -2.05e-4


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class HyperfineConstants:
    nu_hf: float = NU_HF_43CA
    g_j: float = G_J_43CA
    g_i_prime: float = G_I_PRIME_43CA
    i_spin: float = 3.5
    mu_b_over_h: float = MU_B_OVER_H

    def __post_init__(self):
        if not self.nu_hf > 0:
            raise ValueError("nu_hf must be positive")

    @property
    def f_upper(self):
        return self.i_spin + 0.5

    @property
    def f_lower(self):
        return self.i_spin - 0.5

    def x(self, b):
        """Dimensionless field parameter of the Breit-Rabi formula."""
        return (self.g_j - self.g_i_prime) * self.mu_b_over_h * b / self.nu_hf

    def levels(self):
        for f in (self.f_upper, self.f_lower):
            for m in np.arange(-f, f + 1):
                yield LevelLabel(float(f), float(m))


@dataclass(frozen=True)
class LevelLabel:
    f: float
    m_f: float

    def validate(self, c: HyperfineConstants):
        if self.f not in (c.f_upper, c.f_lower):
            raise ValueError(f"F={self.f} is not in the ground manifold (I={c.i_spin})")
        if abs(self.m_f) > self.f or (self.m_f - self.f) % 1:
            raise ValueError(f"invalid m_F={self.m_f} for F={self.f}")


CLOCK_UPPER = LevelLabel(4, 0)
CLOCK_LOWER = LevelLabel(3, 0)
STRETCH_UPPER = LevelLabel(4, 4)
STRETCH_LOWER = LevelLabel(3, 3)


def breit_rabi_energy(c: HyperfineConstants, lvl: LevelLabel, b):
    """E/h of level ``lvl`` at field ``b`` (G)."""
    lvl.validate(c)
    b = np.asarray(b, dtype=float)
    if np.any(b < 0):
        raise ValueError("field must be >= 0")
    two_i1 = 2 * c.i_spin + 1
    x = c.x(b)
    m = lvl.m_f
    sign = 1.0 if lvl.f == c.f_upper else -1.0
    base = -c.nu_hf / (2 * two_i1) + c.g_i_prime * c.mu_b_over_h * m * b
    if abs(m) == c.f_upper:
        # stretched states: the root is exactly (1 +/- x); keep the linear branch
        root = 1.0 + np.sign(m) * x
    else:
        radicand = 1.0 + 4.0 * m * x / two_i1 + x * x
        if np.any(radicand < 0):
            raise DomainError("negative Breit-Rabi radicand")
        root = np.sqrt(radicand)
    return base + sign * 0.5 * c.nu_hf * root


def transition_frequency(c: HyperfineConstants, upper: LevelLabel, lower: LevelLabel, b):
    if upper.f == lower.f:
        raise ValueError("transition labels must sit in opposite F manifolds")
    return breit_rabi_energy(c, upper, b) - breit_rabi_energy(c, lower, b)


def clock_frequency(c: HyperfineConstants, b):
    return transition_frequency(c, CLOCK_UPPER, CLOCK_LOWER, b)


def stretch_frequency(c: HyperfineConstants, b):
    return transition_frequency(c, STRETCH_UPPER, STRETCH_LOWER, b)


def clock_sensitivity(c: HyperfineConstants, b, step=1e-4):
    """d f_clock / dB in Hz/G by central difference."""
    lo = max(b - step, 0.0)
    return (clock_frequency(c, b + step) - clock_frequency(c, lo)) / (b + step - lo)


def field_from_stretch_frequency(c: HyperfineConstants, f_meas, b_max=100.0, f_tol=0.1):
    """Invert the stretch transition for the field (G) by bisection."""
    if f_meas < c.nu_hf:
        raise DomainError(f"stretch frequency {f_meas} Hz below the zero-field splitting")
    if f_meas > stretch_frequency(c, b_max):
        raise DomainError(f"stretch frequency {f_meas} Hz beyond the {b_max} G branch")
    if f_meas == c.nu_hf:
        return 0.0
    # slope ~ 2.45 MHz/G, so xtol well below f_tol / slope
    xtol = f_tol / (4 * (c.g_j - c.g_i_prime) * c.mu_b_over_h)
    b = bisect(lambda b: stretch_frequency(c, b) - f_meas, 0.0, b_max, xtol=xtol, maxiter=200)
    return float(b)


def extrapolate_zero_field_splitting(c: HyperfineConstants, clock_freq_meas, b_meas,
                                     tol=0.01, max_iter=100):
    """Zero-field splitting consistent with a clock frequency measured at ``b_meas``.

    ``c.nu_hf`` is ignored except as the starting guess.  The field parameter
    x depends on the splitting itself, so iterate on the clock-frequency
    residual; d f_clock / d nu = 1 + O(x^2), which makes this a contraction.
    """
    if b_meas < 0:
        raise ValueError("field must be >= 0")
    nu = float(clock_freq_meas)
    for _ in range(max_iter):
        trial = HyperfineConstants(nu, c.g_j, c.g_i_prime, c.i_spin, c.mu_b_over_h)
        nu_next = nu - (float(clock_frequency(trial, b_meas)) - clock_freq_meas)
        if abs(nu_next - nu) < tol:
            return nu_next
        nu = nu_next
    raise RuntimeError("zero-field extrapolation did not converge")
