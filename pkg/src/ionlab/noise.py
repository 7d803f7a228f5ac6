"""Per-shot noise: magnetic field, trap frequency, motional heating, readout.

All randomness comes from :class:`ionlab.rng.CounterStream`, so every draw
is tied to a shot index and the results do not depend on batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .atomic import HyperfineConstants, stretch_frequency
from .physics import IonState, TruncationError

TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class FieldNoiseParams:
    """Linear drift plus one stationary Ornstein-Uhlenbeck term.

    b0 in G, drift_rate in G/s, ou_sigma in G (stationary RMS), ou_tau in s.
    """

    b0: float = 1.78
    drift_rate: float = 0.0
    ou_sigma: float = 0.0
    ou_tau: float = 120.0

    def __post_init__(self):
        if self.ou_sigma < 0:
            raise ValueError("ou_sigma must be >= 0")
        if not self.ou_tau > 0:
            raise ValueError("ou_tau must be > 0")


@dataclass(frozen=True)
class MotionalNoiseParams:
    trap_freq: float = 810e3     # Hz
    v0: float = 500.0            # V
    v_sigma: float = 0.0         # V, quasi-static per shot
    heating_rate: float = 0.0    # quanta/s

    def __post_init__(self):
        if not self.trap_freq > 0:
            raise ValueError("trap_freq must be > 0")
        if self.v0 <= 0 or self.v_sigma < 0 or self.heating_rate < 0:
            raise ValueError("v0 must be > 0; v_sigma and heating_rate >= 0")


@dataclass(frozen=True)
class ReadoutParams:
    """Binary asymmetric readout plus the state-preparation mixture.

    ``wrong_prep_policy`` decides what a failed preparation contributes:
    ``"exclude"`` drops the shot, ``"baseline"`` keeps it as a spectator in
    the lower hyperfine manifold (not shelved).  Spectators leak into the
    shelved manifold at ``spectator_leak_rate`` per second of sequence time.
    """

    p_detect_down: float = 0.95
    p_false_shelve_up: float = 0.002
    prep_success: float = 0.14
    wrong_prep_policy: str = "exclude"
    spectator_leak_rate: float = 0.0

    def __post_init__(self):
        for name in ("p_detect_down", "p_false_shelve_up", "prep_success"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.wrong_prep_policy not in ("exclude", "baseline"):
            raise ValueError("wrong_prep_policy must be 'exclude' or 'baseline'")
        if self.spectator_leak_rate < 0:
            raise ValueError("spectator_leak_rate must be >= 0")

    def observed_up_probability(self, p_up):
        """P(observed up) for true P(up) = p_up."""
        return p_up * (1.0 - self.p_false_shelve_up) + (1.0 - p_up) * (1.0 - self.p_detect_down)

    def correct(self, p_obs):
        """Linear inversion of the channel: observed up-fraction -> true P(up)."""
        return (p_obs - (1.0 - self.p_detect_down)) / (self.p_detect_down - self.p_false_shelve_up)


IDEAL_READOUT = ReadoutParams(1.0, 0.0, 1.0)


def _stream_for(stream, n):
    if isinstance(stream, _rng.CounterStream):
        if len(stream) != n:
            raise ValueError(f"stream covers {len(stream)} shots, need {n}")
        return stream
    return _rng.CounterStream(int(stream), np.arange(n))


def ou_chain(offset_normals, times, sigma, tau):
    """Exact OU update on arbitrary (nondecreasing) sample times."""
    x = np.empty(len(times))
    if len(times) == 0:
        return x
    xi = np.asarray(offset_normals, dtype=float)
    cur = sigma * xi[0]
    x[0] = cur
    t = np.asarray(times, dtype=float)
    if math.isinf(tau):
        x[:] = cur
        return x
    decay = np.exp(-np.diff(t) / tau)
    kick = sigma * np.sqrt(-np.expm1(-2 * np.diff(t) / tau)) * xi[1:]
    # tight scalar loop; a few ms for 10^4 shots
    for k, (a, s) in enumerate(zip(decay.tolist(), kick.tolist()), start=1):
        cur = cur * a + s
        x[k] = cur
    return x


def sample_field(params: FieldNoiseParams, wall_clock_times, stream):
    """Field (G) at each wall-clock time: b0 + drift*t + OU(t).

    ``stream`` is a CounterStream over one index per time (or an int seed,
    in which case indices 0..K-1 are used).
    """
    t = np.asarray(wall_clock_times, dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("times must be nondecreasing")
    s = _stream_for(stream, t.size)
    xi = np.atleast_1d(s.normal(_rng.TAG_FIELD))
    return params.b0 + params.drift_rate * t + ou_chain(xi, t, params.ou_sigma, params.ou_tau)


def clock_shift(c: HyperfineConstants, b):
    """f_clock(b) - nu_hf, evaluated without cancellation."""
    x = c.x(np.asarray(b, dtype=float))
    return c.nu_hf * x * x / (1.0 + np.sqrt(1.0 + x * x))


def qubit_detuning_from_field(c: HyperfineConstants, b, lo_freq):
    """Clock-qubit detuning (rad/s) from a local oscillator at lo_freq (Hz)."""
    return TWO_PI * ((c.nu_hf - lo_freq) + clock_shift(c, b))


def trap_freq_shift(params: MotionalNoiseParams, dv):
    """Angular trap-frequency shift for an end-cap voltage error dv (omega ~ sqrt(V))."""
    ratio = 1.0 + np.asarray(dv, dtype=float) / params.v0
    if np.any(ratio <= 0):
        raise ValueError("end-cap voltage would be non-positive")
    return TWO_PI * params.trap_freq * (np.sqrt(ratio) - 1.0)


def sample_voltage(params: MotionalNoiseParams, stream):
    return params.v_sigma * stream.normal(_rng.TAG_VOLTAGE)


def _no_jump_norm(p, gam, s):
    """sum_n p_n exp(-gam_n s) and its s-derivative, rows independent."""
    e = np.exp(-gam * s[:, None])
    w = p * e
    return w.sum(axis=1), -(w * gam).sum(axis=1)


def heating_jumps(state: IonState, duration, rate, stream, tag=_rng.TAG_HEATING):
    """Quantum-jump unravelling of motional heating over ``duration`` seconds.

    Jump operators sqrt(rate)*a^dagger and sqrt(rate)*a (infinite-temperature
    bath).  Between jumps the no-jump evolution damps |n> by
    exp(-rate (2n+1) t / 2); jump times come from the waiting-time method.
    This reproduces the master equation, so d<n>/dt = rate exactly on average.
    The rotating-frame phases commute with the jumps up to a global phase, so
    this may be applied before or after :func:`free_evolution`.
    """
    duration = float(duration)
    if duration < 0:
        raise ValueError("duration must be >= 0")
    if rate == 0 or duration == 0:
        return state
    amps = np.array(state.amplitudes, dtype=np.complex128)
    batch = amps.shape[:-2]
    amps = amps.reshape((-1,) + amps.shape[-2:])
    n_levels = amps.shape[-1]
    if n_levels < 2:
        raise ValueError("heating needs a motional space (n_max >= 1)")
    idx = np.asarray(stream.index).reshape(-1)
    if idx.size != amps.shape[0]:
        raise ValueError("stream and state batch sizes differ")
    n = np.arange(n_levels, dtype=float)
    gam = rate * (2 * n + 1)
    up_w = n + 1
    t_left = np.full(amps.shape[0], duration)
    active = np.arange(amps.shape[0])
    slot = 0
    while active.size:
        sub = _rng.CounterStream(stream.seed, idx[active])
        r = np.atleast_1d(sub.uniform_open(tag, slot, lane=0))
        a = amps[active]
        p = np.sum(np.abs(a) ** 2, axis=1)
        p /= p.sum(axis=1, keepdims=True)
        tl = t_left[active]
        n_end, _ = _no_jump_norm(p, gam, tl)
        jump = n_end < r
        # trajectories that survive the rest of the interval
        stay = ~jump
        if np.any(stay):
            damp = np.exp(-0.5 * gam[None, :] * tl[stay, None])
            b = a[stay] * damp[:, None, :]
            b /= np.sqrt(np.sum(np.abs(b) ** 2, axis=(1, 2)))[:, None, None]
            amps[active[stay]] = b
        if not np.any(jump):
            break
        j = active[jump]
        pj, rj, tlj = p[jump], r[jump], tl[jump]
        # Newton from s=0 on a convex decreasing function: monotone, never overshoots
        s = np.zeros(j.size)
        for _ in range(60):
            val, der = _no_jump_norm(pj, gam, s)
            step = (val - rj) / -der
            s = np.minimum(s + step, tlj)
            if np.all(np.abs(step) <= 1e-13 * np.maximum(tlj, 1e-300)):
                break
        damp = np.exp(-0.5 * gam[None, :] * s[:, None])
        b = amps[j] * damp[:, None, :]
        pop_n = np.sum(np.abs(b) ** 2, axis=1)
        p_up = (pop_n * up_w).sum(axis=1) / (pop_n * (2 * n + 1)).sum(axis=1)
        u = np.atleast_1d(_rng.CounterStream(stream.seed, idx[j]).uniform(tag, slot, lane=1))
        go_up = u < p_up
        out = np.zeros_like(b)
        if np.any(go_up):
            bu = b[go_up]
            top = np.sum(np.abs(bu[:, :, -1]) ** 2, axis=1) / np.sum(np.abs(bu) ** 2, axis=(1, 2))
            if np.any(top > 1e-12):
                raise TruncationError(f"heating jump would leave the Fock space (n_max={n_levels - 1})")
            shifted = np.zeros_like(bu)
            shifted[:, :, 1:] = bu[:, :, :-1] * np.sqrt(n[1:])
            out[go_up] = shifted
        if np.any(~go_up):
            bd = b[~go_up]
            shifted = np.zeros_like(bd)
            shifted[:, :, :-1] = bd[:, :, 1:] * np.sqrt(n[1:])
            out[~go_up] = shifted
        out /= np.sqrt(np.sum(np.abs(out) ** 2, axis=(1, 2)))[:, None, None]
        amps[j] = out
        t_left[j] = tlj - s
        active = j
        slot += 1
    return IonState(amps.reshape(batch + amps.shape[-2:]))


def readout_channel(true_up, p: ReadoutParams, stream):
    """Observed 'up' after the shelving readout; vectorised over shots."""
    u = stream.uniform(_rng.TAG_READOUT)
    true_up = np.asarray(true_up, dtype=bool)
    obs = np.where(true_up, u >= p.p_false_shelve_up, u >= p.p_detect_down)
    return bool(obs) if np.ndim(obs) == 0 else obs


@dataclass
class NoiseWorld:
    """Per-shot noise realisation for one shot plan.

    ``field_offsets`` are the OU values at each shot start (G) and
    ``voltage_offsets`` the quasi-static end-cap error (V); drift is applied
    continuously through :meth:`field`.
    """

    seed: int
    constants: HyperfineConstants
    field_params: FieldNoiseParams
    motion: MotionalNoiseParams
    readout: ReadoutParams
    lo_reference: float
    shot_starts: np.ndarray
    field_offsets: np.ndarray
    voltage_offsets: np.ndarray
    extra: dict = field(default_factory=dict)

    def field(self, shots, t_in_shot=0.0):
        t = self.shot_starts[shots] + t_in_shot
        return self.field_params.b0 + self.field_params.drift_rate * t + self.field_offsets[shots]

    def qubit_detuning(self, shots, t_in_shot, lo_offset):
        """Clock-qubit detuning (rad/s) for LO = lo_reference + lo_offset."""
        b = self.field(shots, t_in_shot)
        return qubit_detuning_from_field(self.constants, b, self.lo_reference + lo_offset)

    def stretch_detuning(self, shots, t_in_shot, lo_offset):
        """Stretch-transition detuning (rad/s); lo_reference is then a stretch frequency."""
        b = self.field(shots, t_in_shot)
        f = stretch_frequency(self.constants, b)
        return TWO_PI * (f - (self.lo_reference + lo_offset))

    def motional_shift(self, shots):
        return trap_freq_shift(self.motion, self.voltage_offsets[shots])


def realize_world(seed, shot_starts, constants=None, field_params=None, motion=None,
                  readout=None, lo_reference=None):
    """Draw the per-shot field and voltage realisations for a plan."""
    constants = constants or HyperfineConstants()
    field_params = field_params or FieldNoiseParams()
    motion = motion or MotionalNoiseParams()
    readout = readout or ReadoutParams()
    starts = np.asarray(shot_starts, dtype=float)
    stream = _rng.CounterStream(seed, np.arange(starts.size))
    if starts.size:
        xi = np.atleast_1d(stream.normal(_rng.TAG_FIELD))
        offsets = ou_chain(xi, starts, field_params.ou_sigma, field_params.ou_tau)
        dv = np.atleast_1d(sample_voltage(motion, stream))
    else:
        offsets = dv = np.zeros(0)
    if lo_reference is None:
        lo_reference = constants.nu_hf + float(clock_shift(constants, field_params.b0))
    return NoiseWorld(seed, constants, field_params, motion, readout, lo_reference,
                      starts, offsets, dv)
