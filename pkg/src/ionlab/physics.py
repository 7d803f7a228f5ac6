"""Qubit x truncated-oscillator state and the coherent operations on it.

Amplitudes are stored with shape ``(..., 2, n_max + 1)``: axis -2 is the
qubit (0 = down, 1 = up), axis -1 the Fock number.  Any leading axes are a
batch of independent shots; every operation here broadcasts over them, and
pulse parameters may be arrays with the batch shape.

Rotation convention (basis order down, up)::

    H = [[-delta/2,            (Omega/2) e^{-i phi}],
         [(Omega/2) e^{+i phi},  delta/2           ]]

so that a resonant pulse of area theta is
``cos(theta/2) I - i sin(theta/2) (cos(phi) sx + sin(phi) sy)`` and a phase
scan of an ideal Ramsey pair starting in down gives ``P(up) = (1 + cos phi)/2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_TOLERANCE = 1e-6
LEAK_THRESHOLD = 1e-4


class NormalizationError(ValueError):
    pass


class TruncationError(RuntimeError):
    """Population reached the top of the truncated Fock space."""


@dataclass(frozen=True)
class IonState:
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=np.complex128)
        if a.ndim < 2 or a.shape[-2] != 2:
            raise ValueError(f"amplitudes must have shape (..., 2, n_max+1), got {a.shape}")
        object.__setattr__(self, "amplitudes", a)

    @property
    def n_max(self) -> int:
        return self.amplitudes.shape[-1] - 1

    @property
    def batch_shape(self):
        return self.amplitudes.shape[:-2]

    @property
    def vector(self) -> np.ndarray:
        """Flat amplitude vector of length 2*(n_max+1), index q*(n_max+1) + n."""
        return self.amplitudes.reshape(self.batch_shape + (-1,))

    def norm(self):
        return np.sqrt(np.sum(np.abs(self.amplitudes) ** 2, axis=(-2, -1)))

    def population(self, q: int, n: int):
        return np.abs(self.amplitudes[..., q, n]) ** 2

    def fock_distribution(self):
        return np.sum(np.abs(self.amplitudes) ** 2, axis=-2)

    def mean_n(self):
        p = self.fock_distribution()
        return p @ np.arange(self.n_max + 1)

    @classmethod
    def basis(cls, q: int, n: int = 0, n_max: int = 0, batch_shape=()):
        a = np.zeros(tuple(batch_shape) + (2, n_max + 1), dtype=np.complex128)
        a[..., q, n] = 1.0
        return cls(a)

    @classmethod
    def from_components(cls, components: dict, n_max: int):
        """Normalised state from ``{(q, n): amplitude}``."""
        a = np.zeros((2, n_max + 1), dtype=np.complex128)
        for (q, n), c in components.items():
            a[q, n] = c
        a /= np.linalg.norm(a)
        return cls(a)


@dataclass(frozen=True)
class PulseParams:
    """One coherent pulse.

    rabi_frequency and detuning in rad/s, duration in s, phase in rad.
    ``kind`` is ``"carrier"`` or ``"red_sideband"``; ``lamb_dicke`` scales the
    sideband coupling only.  Numeric fields may be batch-shaped arrays.
    """

    rabi_frequency: float
    duration: float
    phase: float = 0.0
    detuning: float = 0.0
    kind: str = "carrier"
    lamb_dicke: float = 0.1

    def __post_init__(self):
        if self.kind not in ("carrier", "red_sideband"):
            raise ValueError(f"unknown pulse kind {self.kind!r}")
        if np.any(np.asarray(self.duration) < 0):
            raise ValueError("pulse duration must be >= 0")
        if np.any(np.asarray(self.rabi_frequency) < 0):
            raise ValueError("rabi_frequency must be >= 0")
        if not 0 < self.lamb_dicke < 1:
            raise ValueError("lamb_dicke must lie in (0, 1)")

    @property
    def area(self):
        coupling = self.rabi_frequency * (self.lamb_dicke if self.kind == "red_sideband" else 1.0)
        return coupling * self.duration


def rabi_propagator(rabi, duration, phase, detuning):
    """Exact detuned two-level propagator, returned as (u00, u01, u10, u11).

    All arguments broadcast; outputs have the broadcast shape.
    """
    rabi, duration, phase, detuning = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (rabi, duration, phase, detuning)))
    w = np.hypot(rabi, detuning)
    half = 0.5 * w * duration
    c = np.cos(half)
    # sin(w t/2)/w, finite as w -> 0
    s_over_w = 0.5 * duration * np.sinc(half / np.pi)
    eip = np.exp(1j * phase)
    u00 = c + 1j * s_over_w * detuning
    u11 = c - 1j * s_over_w * detuning
    u01 = -1j * s_over_w * rabi * np.conj(eip)
    u10 = -1j * s_over_w * rabi * eip
    return u00, u01, u10, u11


def _check_normalized(state: IonState):
    dev = np.abs(state.norm() - 1.0)
    if np.any(dev > NORM_TOLERANCE):
        raise NormalizationError(f"state norm deviates from 1 by {np.max(dev):.3g}")


def _lift(x):
    """Batch-shaped array -> broadcastable against (..., n) Fock rows."""
    return np.asarray(x)[..., None]


def carrier_rotation(state: IonState, p: PulseParams) -> IonState:
    if p.kind != "carrier":
        raise ValueError("carrier_rotation needs a carrier pulse")
    _check_normalized(state)
    u00, u01, u10, u11 = (_lift(u) for u in
                          rabi_propagator(p.rabi_frequency, p.duration, p.phase, p.detuning))
    a = state.amplitudes
    out = np.empty(np.broadcast_shapes(a.shape, u00.shape[:-1] + (2, 1)), dtype=np.complex128)
    dn, up = a[..., 0, :], a[..., 1, :]
    out[..., 0, :] = u00 * dn + u01 * up
    out[..., 1, :] = u10 * dn + u11 * up
    return IonState(out)


def sideband_rotation(state: IonState, p: PulseParams) -> IonState:
    """Red-sideband pulse: couples |up, n> <-> |down, n+1> at Omega*eta*sqrt(n+1)."""
    if p.kind != "red_sideband":
        raise ValueError("sideband_rotation needs a red_sideband pulse")
    if state.n_max < 2:
        raise ValueError("sideband operations need n_max >= 2")
    _check_normalized(state)
    top = np.sum(np.abs(state.amplitudes[..., :, -1]) ** 2, axis=-1)
    if np.any(top > LEAK_THRESHOLD):
        raise TruncationError(
            f"population {np.max(top):.3g} at n_max={state.n_max} before sideband pulse")
    n = np.arange(state.n_max)
    rabi = _lift(np.asarray(p.rabi_frequency) * p.lamb_dicke) * np.sqrt(n + 1.0)
    u00, u01, u10, u11 = rabi_propagator(rabi, _lift(p.duration), _lift(p.phase), _lift(p.detuning))
    a = state.amplitudes
    out = np.array(np.broadcast_to(a, np.broadcast_shapes(a.shape, u00.shape[:-1] + (2, 1))))
    lower = a[..., 0, 1:]   # |down, n+1>
    upper = a[..., 1, :-1]  # |up, n>
    out[..., 0, 1:] = u00 * lower + u01 * upper
    out[..., 1, :-1] = u10 * lower + u11 * upper
    return IonState(out)


def apply_pulse(state: IonState, p: PulseParams) -> IonState:
    if p.kind == "carrier":
        return carrier_rotation(state, p)
    return sideband_rotation(state, p)


def free_evolution(state: IonState, tau, qubit_detuning=0.0, motional_detuning=0.0) -> IonState:
    """Rotating-frame phase: (q, n) picks up exp(-i (q dq + n dm) tau)."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("tau must be >= 0")
    q = np.array([0.0, 1.0])[:, None]
    n = np.arange(state.n_max + 1, dtype=float)[None, :]
    tau = np.asarray(tau, dtype=float)[..., None, None]
    dq = np.asarray(qubit_detuning, dtype=float)[..., None, None]
    dm = np.asarray(motional_detuning, dtype=float)[..., None, None]
    phase = np.exp(-1j * (q * dq + n * dm) * tau)
    return IonState(state.amplitudes * phase)


def measure_qubit_population(state: IonState):
    """P(up), summed over Fock levels."""
    p = np.sum(np.abs(state.amplitudes[..., 1, :]) ** 2, axis=-1)
    return float(p) if np.ndim(p) == 0 else p
