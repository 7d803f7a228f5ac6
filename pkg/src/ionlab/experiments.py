"""Config-driven protocols: hyperfine Ramsey and spin echo, motional Ramsey,
stretch-transition magnetometry, and the coherence-time pipelines on top.
"""

from __future__ import annotations

import dataclasses
import platform
from dataclasses import dataclass

import numpy as np

from . import __version__, rng
from .analysis import (FitError, FitResult, analyze_fringes, binomial_stderr,
                       fit_exponential_decay)
from .atomic import clock_sensitivity, field_from_stretch_frequency, stretch_frequency
from .config import RunConfig
from .datasets import FringeDataset
from .lm import levenberg_marquardt
from .noise import FieldNoiseParams, realize_world, trap_freq_shift
from .sequencer import TEST, build_shot_plan, execute_plan

TAU_SHORT = 0.145e-3
ECHO_CONTROL_DELAY = 0.30e-3


# --- sequence text --------------------------------------------------------

def ramsey_sequence(delay, phase_scan=False, pulse="pi2", channel="mw"):
    last = f"pulse {pulse} {channel}" + (" phase=$scan" if phase_scan else "")
    return f"prepare\npulse {pulse} {channel}\ndelay {delay!r}\n{last}\nmeasure\n"


def echo_sequence(delay, with_pi=True, phase_scan=True):
    """Spin echo with total gap ``delay`` between the pi/2 pulses."""
    last = "pulse pi2 mw" + (" phase=$scan" if phase_scan else "")
    if not with_pi:
        return f"prepare\npulse pi2 mw\ndelay {delay!r}\n{last}\nmeasure\n"
    half = 0.5 * delay
    return (f"prepare\npulse pi2 mw\ndelay {half!r}\npulse pi mw\ndelay {half!r}\n"
            f"{last}\nmeasure\n")


def motional_sequence(tau_m, n_bar=0.0):
    """Carrier pi/2, red-sideband pi, delay tau_M + scan, and the mirror image."""
    return (f"prepare\ncool {n_bar!r}\npulse pi2c carrier\npulse pirsb rsb\n"
            f"delay {tau_m!r}+$scan\npulse pirsb rsb\npulse pi2c carrier\nmeasure\n")


def probe_sequence(pulse="probe", channel="mw"):
    return f"prepare\npulse {pulse} {channel}\nmeasure\n"


# --- running --------------------------------------------------------------

def dataset_metadata(cfg: RunConfig, plan):
    return {
        "experiment": cfg.experiment,
        "seed": int(cfg.seed),
        "config_digest": cfg.digest(),
        "plan_digest": plan.digest(),
        "wall_clock_duration": plan.total_duration,
        "start_time": cfg.start_time,
        "scan_variable": cfg.scan.variable,
        "initial_qubit": cfg.initial_qubit,
        "readout": dataclasses.asdict(cfg.readout),
        "rng": {"algorithm": rng.STREAM_ALGORITHM, "version": rng.STREAM_VERSION},
        "versions": {"ionlab": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
    }


def run_experiment(cfg: RunConfig, threads=1) -> FringeDataset:
    """Plan, realise the noise, execute every shot and aggregate per point."""
    plan = build_shot_plan(list(cfg.test_ops), cfg.scan, cfg.per_shot_overhead, cfg.pulses,
                           seed=cfg.seed)
    world = realize_world(cfg.seed, plan.wall_clock_start + cfg.start_time, cfg.constants,
                          cfg.field_noise, cfg.motion, cfg.readout, cfg.lo_reference)
    control = list(cfg.control_ops) if cfg.control_ops is not None else None
    result = execute_plan(plan, list(cfg.test_ops), control, cfg.machine(), world, threads)
    ds = FringeDataset.from_shots(plan, result, dataset_metadata(cfg, plan))
    return ds


def _require(cfg, kind, cond, message):
    if cfg.experiment != kind:
        raise ValueError(f"config is for {cfg.experiment!r}, not {kind!r}")
    if not cond:
        raise ValueError(message)


def run_hyperfine_ramsey(cfg: RunConfig, threads=1) -> FringeDataset:
    _require(cfg, "hyperfine_ramsey", cfg.control_ops is not None,
             "hyperfine Ramsey runs need an interleaved control sequence")
    return run_experiment(cfg, threads)


def run_spin_echo(cfg: RunConfig, threads=1) -> FringeDataset:
    _require(cfg, "spin_echo", cfg.scan.variable == "phase",
             "spin-echo runs scan the phase of the final pulse")
    return run_experiment(cfg, threads)


def run_motional_ramsey(cfg: RunConfig, threads=1) -> FringeDataset:
    _require(cfg, "motional_ramsey", cfg.n_max >= 2 and cfg.scan.variable == "delay_offset",
             "motional Ramsey needs n_max >= 2 and a delay_offset scan")
    return run_experiment(cfg, threads)


# --- hyperfine T2 ---------------------------------------------------------

def ramsey_config(base: RunConfig, delay, seed, points=13, shots=None, phase_scan=False):
    """Copy of ``base`` with a Ramsey delay, its +/- 1/delay scan and a seed."""
    if phase_scan:
        values = np.linspace(0, 4 * np.pi, points)
        var = "phase"
    else:
        values = np.linspace(-1.0 / delay, 1.0 / delay, points)
        var = "frequency"
    scan = dataclasses.replace(base.scan, variable=var, values=tuple(values),
                               shots_per_point=shots or base.scan.shots_per_point)
    cfg = base.replace(seed=seed, scan=scan)
    return cfg.with_sequences(ramsey_sequence(delay, phase_scan),
                              ramsey_sequence(TAU_SHORT, phase_scan))


@dataclass
class DecaySeries:
    delays: np.ndarray
    ratios: np.ndarray
    errors: np.ndarray
    fit: FitResult
    runs: list


def t2_series(base: RunConfig, delays, seed, points=13, threads=1) -> DecaySeries:
    """One independently seeded run per delay, each normalised to its control,
    then an exponential fit of the amplitude ratios."""
    ratios, errs, runs = [], [], []
    for k, tau in enumerate(delays):
        cfg = ramsey_config(base, float(tau), run_seed(seed, k), points)
        fa = analyze_fringes(run_hyperfine_ramsey(cfg, threads), period_guess=float(tau) ** -1)
        ratios.append(fa.amplitude_ratio)
        errs.append(fa.amplitude_ratio_stderr)
        runs.append(fa)
    d, r, e = (np.asarray(v, dtype=float) for v in (delays, ratios, errs))
    return DecaySeries(d, r, e, fit_exponential_decay(d, r, e), runs)


def run_seed(seed, k):
    """Seed of the k-th run in a series: a Philox draw, so series never overlap."""
    raw = rng.CounterStream(int(seed), int(k)).raw(rng.TAG_SHUFFLE + 1000, 0)
    return int(np.asarray(raw).ravel()[0] >> np.uint64(1))


def calibrate_field_noise(target_contrast, delay, constants, b0=1.78, ou_tau=120.0,
                          drift_rate=0.0) -> FieldNoiseParams:
    """ou_sigma for which shot-to-shot static field noise gives Ramsey
    contrast ``target_contrast`` at ``delay``: C = exp(-(2 pi S sigma tau)^2 / 2)."""
    if not 0 < target_contrast < 1:
        raise ValueError("target contrast must lie in (0, 1)")
    s = float(clock_sensitivity(constants, b0))
    sigma = np.sqrt(2 * np.log(1 / target_contrast)) / (2 * np.pi * s * delay)
    return FieldNoiseParams(b0, drift_rate, float(sigma), ou_tau)


def static_dephasing_contrast(constants, field: FieldNoiseParams, delay):
    s = float(clock_sensitivity(constants, field.b0))
    return np.exp(-0.5 * (2 * np.pi * s * field.ou_sigma * np.asarray(delay)) ** 2)


def drift_period(delay, drift, scan_rate):
    """Apparent fringe period (Hz) for atomic drift ``drift`` and LO scan rate
    ``scan_rate`` (both Hz/s)."""
    return (1.0 / delay) / (1.0 - drift / scan_rate)


def scan_rate(ds: FringeDataset):
    """LO scan rate (Hz/s) from a linear fit of scan value vs mean start time."""
    m = ds.role == TEST
    x, t = ds.scan_value[m], ds.wall_clock_start[m]
    return float(np.polyfit(t, x, 1)[0])


def clock_drift_rate(cfg: RunConfig):
    """d(clock frequency)/dt in Hz/s for the configured linear field drift."""
    return float(clock_sensitivity(cfg.constants, cfg.field_noise.b0)) * cfg.field_noise.drift_rate


# --- motional T2' ---------------------------------------------------------

def motional_config(base: RunConfig, tau_m, seed, points=None, shots=None):
    dm = base.motional_detuning
    n = points or len(base.scan.values)
    values = np.linspace(0.0, 3.0 / dm, n)
    scan = dataclasses.replace(base.scan, values=tuple(values),
                               shots_per_point=shots or base.scan.shots_per_point)
    n_bar = next((op.n_bar for op in base.test_ops if op.kind == "cool"), 0.0)
    return base.replace(seed=seed, scan=scan).with_sequences(motional_sequence(tau_m, n_bar))


def motional_contrast(dataset, period=None):
    """Readout-corrected fringe amplitude of a motional Ramsey run."""
    return analyze_fringes(dataset, readout_correct=True, period_guess=period)


def t2_prime_series(base: RunConfig, delays, seed, threads=1, points=None, shots=None) -> DecaySeries:
    amps, errs, runs = [], [], []
    period = 1.0 / base.motional_detuning
    for k, tau in enumerate(delays):
        cfg = motional_config(base, float(tau), run_seed(seed, k), points, shots)
        fa = motional_contrast(run_motional_ramsey(cfg, threads), period)
        amps.append(fa.test["amplitude"])
        errs.append(fa.test.error("amplitude"))
        runs.append(fa)
    d, a, e = (np.asarray(v, dtype=float) for v in (delays, amps, errs))
    return DecaySeries(d, a, e, fit_exponential_decay(d, a, e), runs)


def trap_frequency_sigma(motion):
    """RMS angular trap-frequency error (rad/s) for the configured voltage noise."""
    return abs(float(trap_freq_shift(motion, motion.v_sigma) - trap_freq_shift(motion, -motion.v_sigma))) / 2


def heating_coherence(delay, heating_rate):
    """|rho_01(t)| / |rho_01(0)| under symmetric heating at rate Gamma.

    With up and down jump rates Gamma (n+1) and Gamma n the 0/1 coherence
    is fed back from the 1/2 coherence, and the exact solution starting from
    a 0/1 superposition is 1 / (1 + Gamma t)^2.  Its initial slope is
    -2 Gamma, the no-jump decay of the pair.
    """
    return (1.0 + heating_rate * np.asarray(delay, dtype=float)) ** -2


def motional_contrast_model(delay, heating_rate, sigma_omega):
    """Fringe contrast: heating loss of the 0/1 coherence times the Gaussian
    static-dephasing factor from quasi-static trap-frequency noise."""
    t = np.asarray(delay, dtype=float)
    return heating_coherence(t, heating_rate) * np.exp(-0.5 * (sigma_omega * t) ** 2)


def scaled_motion(motion, trap_freq):
    """Same electrode noise at another trap frequency: V scales as omega^2."""
    v0 = motion.v0 * (trap_freq / motion.trap_freq) ** 2
    return dataclasses.replace(motion, trap_freq=trap_freq, v0=v0)


# --- field calibration ----------------------------------------------------

@dataclass
class FieldCalibration:
    field: float
    centre: float
    centre_stderr: float
    fit: FitResult
    dataset: FringeDataset


def rabi_lineshape(df, centre, amplitude, baseline, rabi, duration):
    """Transfer probability of a square pulse versus detuning (Hz)."""
    d = 2 * np.pi * (np.asarray(df) - centre)
    w = np.hypot(rabi, d)
    return baseline + amplitude * (rabi / w) ** 2 * np.sin(0.5 * w * duration) ** 2


def fit_resonance(x, y, sigma, rabi, duration) -> FitResult:
    """Weighted fit of a Rabi lineshape with known pulse; free centre,
    amplitude and baseline."""
    x, y, sigma = (np.asarray(a, dtype=float) for a in (x, y, sigma))
    h = 1e-3 / duration

    def fun(p):
        c, a, b = p
        r = (rabi_lineshape(x, c, a, b, rabi, duration) - y) / sigma
        shape = rabi_lineshape(x, c, 1.0, 0.0, rabi, duration)
        dc = (rabi_lineshape(x, c + h, a, b, rabi, duration)
              - rabi_lineshape(x, c - h, a, b, rabi, duration)) / (2 * h)
        return r, np.column_stack([dc, shape, np.ones_like(x)]) / sigma[:, None]

    peak = int(np.argmax(np.abs(y - np.median(y))))
    if peak in (0, x.size - 1):
        raise FitError("resonance is not bracketed by the scan")
    out = levenberg_marquardt(fun, [x[peak], np.ptp(y), float(np.min(y))])
    r, J = fun(out.params)
    cov = np.linalg.pinv(J.T @ J)
    res = FitResult("rabi_resonance", ("centre", "amplitude", "baseline"), out.params, cov,
                    float(r @ r), x.size, out.converged)
    if not (x.min() < res["centre"] < x.max()):
        raise FitError("fitted resonance centre lies outside the scan")
    return res


def run_field_calibration(cfg: RunConfig, threads=1) -> FieldCalibration:
    """Scan the stretch transition, fit its centre and invert for the field.

    Scan values are offsets (Hz) from the stretch frequency at the nominal
    field ``extra.b_nominal`` (default ``noise.field.b0``).
    """
    _require(cfg, "field_calibration", cfg.scan.variable == "frequency",
             "field calibration scans frequency")
    b_nom = float(cfg.extra.get("b_nominal", cfg.field_noise.b0))
    f_ref = float(stretch_frequency(cfg.constants, b_nom))
    cfg = cfg.replace(lo_reference=f_ref, qubit_model="stretch")
    ds = run_experiment(cfg, threads)
    x, shots, ups = ds.select(TEST)
    keep = shots > 0
    p = ups[keep] / shots[keep]
    s = binomial_stderr(ups[keep], shots[keep])
    probe = [op for op in cfg.test_ops if op.kind == "pulse"]
    if len(probe) != 1:
        raise ValueError("field calibration sequence must contain exactly one probe pulse")
    pp = cfg.pulses[probe[0].name]
    fit = fit_resonance(x[keep], p, s, pp.rabi_frequency, pp.duration)
    centre = f_ref + fit["centre"]
    b = field_from_stretch_frequency(cfg.constants, centre)
    return FieldCalibration(b, centre, fit.error("centre"), fit, ds)

