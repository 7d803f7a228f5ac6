"""Pulse-sequence text format, shot scheduling and shot execution.

Sequence files are line oriented, one operation per line, ``#`` starts a
comment::

    prepare
    cool 0.05
    pulse pi2 mw
    delay 0.2
    pulse pi2 mw phase=$scan
    measure

``delay`` takes seconds, ``$scan`` or ``<seconds>+$scan``; ``pulse`` takes a
name (resolved against the run's pulse table), a channel (``microwave``,
``raman_carrier``, ``raman_rsb`` or the short forms ``mw``, ``carrier``,
``rsb``) and an optional ``phase=<rad>`` / ``phase=$scan``.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .noise import NoiseWorld, heating_jumps
from .physics import IonState, PulseParams, TruncationError, apply_pulse, free_evolution, \
    measure_qubit_population

CHANNELS = {"microwave": "microwave", "mw": "microwave",
            "raman_carrier": "raman_carrier", "carrier": "raman_carrier",
            "raman_rsb": "raman_rsb", "rsb": "raman_rsb"}
SCAN_VARIABLES = ("frequency", "phase", "delay_offset")
CONTROL, TEST = 0, 1
ROLE_NAMES = {CONTROL: "control", TEST: "test"}
EXEC_CHUNK = 4096


class SequenceSyntaxError(ValueError):
    def __init__(self, line, column, message):
        self.line, self.column = line, column
        super().__init__(f"line {line}, column {column}: {message}")


class SequenceStructureError(ValueError):
    pass


@dataclass(frozen=True)
class SequenceOp:
    kind: str
    name: str | None = None
    channel: str | None = None
    phase: float | None = None
    phase_scan: bool = False
    duration: float = 0.0
    delay_scan: bool = False
    n_bar: float = 0.0
    line: int = field(default=0, compare=False)

    def to_text(self) -> str:
        if self.kind == "pulse":
            out = f"pulse {self.name} {self.channel}"
            if self.phase_scan:
                out += " phase=$scan"
            elif self.phase is not None:
                out += f" phase={self.phase!r}"
            return out
        if self.kind == "delay":
            if self.delay_scan:
                return f"delay {self.duration!r}+$scan" if self.duration else "delay $scan"
            return f"delay {self.duration!r}"
        if self.kind == "cool":
            return f"cool {self.n_bar!r}"
        return self.kind


def _number(tok, line, col, what):
    try:
        v = float(tok)
    except ValueError:
        raise SequenceSyntaxError(line, col, f"expected {what}, got {tok!r}") from None
    if not np.isfinite(v):
        raise SequenceSyntaxError(line, col, f"{what} must be finite")
    return v


def parse_sequence(text: str) -> list[SequenceOp]:
    ops = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        if not body.strip():
            continue
        col0 = len(body) - len(body.lstrip()) + 1
        toks = body.split()
        cols = []
        pos = 0
        for t in toks:
            pos = body.index(t, pos)
            cols.append(pos + 1)
            pos += len(t)
        head, args = toks[0], toks[1:]
        if head in ("prepare", "measure"):
            if args:
                raise SequenceSyntaxError(lineno, cols[1], f"'{head}' takes no arguments")
            ops.append(SequenceOp(head, line=lineno))
        elif head == "cool":
            if len(args) != 1:
                raise SequenceSyntaxError(lineno, col0, "usage: cool <n_bar>")
            nb = _number(args[0], lineno, cols[1], "mean phonon number")
            if nb < 0:
                raise SequenceSyntaxError(lineno, cols[1], "n_bar must be >= 0")
            ops.append(SequenceOp("cool", n_bar=nb, line=lineno))
        elif head == "delay":
            if len(args) != 1:
                raise SequenceSyntaxError(lineno, col0, "usage: delay <seconds|$scan|<seconds>+$scan>")
            arg = args[0]
            scan = False
            if arg == "$scan":
                dur, scan = 0.0, True
            elif arg.endswith("+$scan"):
                dur, scan = _number(arg[:-6], lineno, cols[1], "delay in seconds"), True
            else:
                dur = _number(arg, lineno, cols[1], "delay in seconds")
            if dur < 0:
                raise SequenceSyntaxError(lineno, cols[1], "delay must be >= 0")
            ops.append(SequenceOp("delay", duration=dur, delay_scan=scan, line=lineno))
        elif head == "pulse":
            if len(args) not in (2, 3):
                raise SequenceSyntaxError(lineno, col0, "usage: pulse <name> <channel> [phase=<rad>]")
            name, chan = args[0], args[1]
            if chan not in CHANNELS:
                raise SequenceSyntaxError(lineno, cols[2], f"unknown channel {chan!r}")
            phase, pscan = None, False
            if len(args) == 3:
                if not args[2].startswith("phase="):
                    raise SequenceSyntaxError(lineno, cols[3], f"unexpected argument {args[2]!r}")
                val = args[2][6:]
                if val == "$scan":
                    pscan = True
                else:
                    phase = _number(val, lineno, cols[3] + 6, "phase in radians")
            ops.append(SequenceOp("pulse", name=name, channel=CHANNELS[chan], phase=phase,
                                  phase_scan=pscan, line=lineno))
        else:
            raise SequenceSyntaxError(lineno, col0, f"unknown directive {head!r}")
    validate_structure(ops)
    return ops


def validate_structure(ops):
    if not ops:
        raise SequenceStructureError("empty sequence: need 'prepare' ... 'measure'")
    kinds = [op.kind for op in ops]
    if kinds[0] != "prepare" or kinds.count("prepare") != 1:
        raise SequenceStructureError("sequence must start with exactly one 'prepare'")
    if kinds[-1] != "measure" or kinds.count("measure") != 1:
        raise SequenceStructureError("sequence must end with exactly one 'measure'")


def serialize_sequence(ops) -> str:
    return "\n".join(op.to_text() for op in ops) + "\n"


def pulse_names(ops):
    return [op.name for op in ops if op.kind == "pulse"]


@dataclass(frozen=True)
class ScanSpec:
    variable: str
    values: tuple
    shots_per_point: int = 500
    interleave_control: bool = True
    control_sequence: tuple | None = None
    randomize_scan: bool = False

    def __post_init__(self):
        if self.variable not in SCAN_VARIABLES:
            raise ValueError(f"scan variable must be one of {SCAN_VARIABLES}")
        if len(self.values) == 0:
            raise ValueError("scan needs at least one value")
        if self.shots_per_point < 1:
            raise ValueError("shots_per_point must be >= 1")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.control_sequence is not None:
            object.__setattr__(self, "control_sequence", tuple(self.control_sequence))


def sequence_duration(ops, pulses, scan_value=0.0, variable=None):
    """Intrinsic duration (s) of one execution."""
    total = 0.0
    for op in ops:
        if op.kind == "pulse":
            total += float(pulses[op.name].duration)
        elif op.kind == "delay":
            total += op.duration + (scan_value if op.delay_scan and variable == "delay_offset" else 0.0)
    return total


@dataclass
class ShotPlan:
    """Shots in execution order (column arrays)."""

    role: np.ndarray
    point: np.ndarray
    scan_value: np.ndarray
    wall_clock_start: np.ndarray
    duration: np.ndarray
    per_shot_overhead: float
    variable: str

    def __len__(self):
        return self.role.size

    @property
    def total_duration(self):
        if not len(self):
            return 0.0
        return float(self.wall_clock_start[-1] + self.duration[-1] + self.per_shot_overhead)

    def to_bytes(self) -> bytes:
        cols = (self.role.astype("<i1"), self.point.astype("<i4"), self.scan_value.astype("<f8"),
                self.wall_clock_start.astype("<f8"), self.duration.astype("<f8"))
        return b"".join(c.tobytes() for c in cols) + repr(self.per_shot_overhead).encode()

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def build_shot_plan(test, scan: ScanSpec, overhead, pulses, seed=0) -> ShotPlan:
    """Lay out shots and their wall-clock start times.

    Interleaved: each repetition is a (control, test) pair.  Otherwise each
    point runs all of its control shots and then all its test shots.  With
    ``scan.randomize_scan`` the (point, repetition) pairs are shuffled as a
    whole, so slow drifts are spread evenly over every scan value.
    """
    control = list(scan.control_sequence) if scan.control_sequence is not None else None
    n_pts, reps = len(scan.values), scan.shots_per_point
    pts = np.repeat(np.arange(n_pts), reps)
    if scan.randomize_scan:
        keys = _rng.CounterStream(seed, np.arange(pts.size)).uniform(_rng.TAG_SHUFFLE)
        pts = pts[np.argsort(keys, kind="stable")]
    roles = []
    points = []
    if control is None:
        roles = [np.full(pts.size, TEST)]
        points = [pts]
    elif scan.interleave_control:
        roles = [np.tile([CONTROL, TEST], pts.size)]
        points = [np.repeat(pts, 2)]
    else:
        if scan.randomize_scan:
            roles = [np.concatenate([np.full(pts.size, CONTROL), np.full(pts.size, TEST)])]
            points = [np.concatenate([pts, pts])]
        else:
            blk = np.concatenate([np.full(reps, CONTROL), np.full(reps, TEST)])
            roles = [np.tile(blk, n_pts)]
            points = [np.repeat(np.arange(n_pts), 2 * reps)]
    role = np.concatenate(roles).astype(np.int8)
    point = np.concatenate(points).astype(np.int32)
    values = np.asarray(scan.values)[point]
    dur_tab = {}
    for r, ops in ((TEST, test), (CONTROL, control)):
        if ops is None:
            continue
        dur_tab[r] = np.array([sequence_duration(ops, pulses, v, scan.variable) for v in scan.values])
    duration = np.where(role == TEST, dur_tab[TEST][point],
                        dur_tab[CONTROL][point] if CONTROL in dur_tab else 0.0)
    step = duration + overhead
    start = np.concatenate([[0.0], np.cumsum(step[:-1])])
    return ShotPlan(role, point, values, start, duration, float(overhead), scan.variable)


@dataclass
class Machine:
    """What the sequence names resolve to and how the ion is set up.

    ``initial_qubit``: 1 prepares up, 0 prepares down.  ``qubit_model``:
    ``"clock"`` / ``"stretch"`` take qubit detunings from the field via the
    Breit-Rabi clock or stretch transition, ``"none"`` keeps the qubit
    resonant apart from the scanned LO offset.
    ``motional_detuning`` (rad/s) is the frame detuning applied to the
    Fock ladder during delays.
    """

    pulses: dict
    n_max: int = 0
    initial_qubit: int = 1
    qubit_model: str = "clock"
    motional_detuning: float = 0.0

    def __post_init__(self):
        if self.qubit_model not in ("clock", "stretch", "none"):
            raise ValueError(f"unknown qubit_model {self.qubit_model!r}")
        if self.initial_qubit not in (0, 1):
            raise ValueError("initial_qubit must be 0 or 1")


@dataclass
class BatchResult:
    observed_up: np.ndarray
    valid: np.ndarray
    p_up: np.ndarray
    p_observed: np.ndarray


def _geometric(u, n_bar):
    if n_bar <= 0:
        return np.zeros_like(u, dtype=int)
    q = n_bar / (1.0 + n_bar)
    return np.floor(np.log1p(-u) / np.log(q)).astype(int)


def _qubit_detuning(machine, world, shots, t, lo_offset):
    if machine.qubit_model == "clock":
        return world.qubit_detuning(shots, t, lo_offset)
    if machine.qubit_model == "stretch":
        return world.stretch_detuning(shots, t, lo_offset)
    return -2 * np.pi * lo_offset


def run_batch(ops, machine: Machine, world: NoiseWorld, shots, scan_values, variable) -> BatchResult:
    """Execute one sequence for an array of shot indices."""
    shots = np.asarray(shots, dtype=np.int64)
    scan_values = np.asarray(scan_values, dtype=float)
    stream = _rng.CounterStream(world.seed, shots)
    ro = world.readout
    B = shots.size
    prepared = np.atleast_1d(stream.uniform(_rng.TAG_PREP)) < ro.prep_success
    state = IonState.basis(machine.initial_qubit, 0, machine.n_max, (B,))
    lo_offset = scan_values if variable == "frequency" else np.zeros(B)
    phase_bound = [i for i, op in enumerate(ops) if op.kind == "pulse" and op.phase_scan]
    if variable == "phase" and not phase_bound:
        phase_bound = [max(i for i, op in enumerate(ops) if op.kind == "pulse")]
    dm = machine.motional_detuning + (world.motional_shift(shots) if machine.n_max else 0.0)
    heating = world.motion.heating_rate if machine.n_max else 0.0
    t_vec = np.zeros(B)
    for i, op in enumerate(ops):
        if op.kind == "cool":
            n0 = _geometric(np.atleast_1d(stream.uniform(_rng.TAG_COOL)), op.n_bar)
            if np.any(n0 > machine.n_max):
                raise TruncationError(f"thermal sample n={n0.max()} exceeds n_max={machine.n_max}")
            a = np.zeros_like(state.amplitudes)
            a[np.arange(B), machine.initial_qubit, n0] = 1.0
            state = IonState(a)
        elif op.kind == "pulse":
            p = machine.pulses[op.name]
            dur = float(p.duration)
            dq = _qubit_detuning(machine, world, shots, t_vec + 0.5 * dur, lo_offset)
            phase = np.full(B, p.phase if op.phase is None else op.phase)
            if i in phase_bound and variable == "phase":
                phase = phase + scan_values
            if op.channel == "raman_rsb":
                det = p.detuning + (world.motional_shift(shots) if machine.n_max else 0.0) + np.zeros(B)
            else:
                det = p.detuning + dq
            state = apply_pulse(state, replace(p, phase=phase, detuning=det))
            t_vec = t_vec + dur
        elif op.kind == "delay":
            dur = op.duration + (scan_values if op.delay_scan and variable == "delay_offset" else 0.0)
            dur = np.broadcast_to(np.asarray(dur, dtype=float), (B,))
            dq = _qubit_detuning(machine, world, shots, t_vec + 0.5 * dur, lo_offset)
            state = free_evolution(state, dur, dq, dm)
            if heating:
                state = _heat_variable(state, dur, heating, world.seed, shots, _rng.TAG_HEATING + i)
            t_vec = t_vec + dur
    p_up = np.clip(measure_qubit_population(state), 0.0, 1.0)
    p_up = np.atleast_1d(p_up)
    if ro.wrong_prep_policy == "baseline":
        # spectators sit in the unshelved manifold unless they leak during the sequence
        spect_up = np.exp(-ro.spectator_leak_rate * t_vec)
        leaked = np.atleast_1d(stream.uniform(_rng.TAG_LEAK)) >= spect_up
        p_up = np.where(prepared, p_up, spect_up)
        valid = np.ones(B, dtype=bool)
    else:
        leaked = np.zeros(B, dtype=bool)
        valid = prepared
    true_up = np.atleast_1d(stream.uniform(_rng.TAG_PROJECT)) < p_up
    true_up = np.where(prepared, true_up, ~leaked)
    u = np.atleast_1d(stream.uniform(_rng.TAG_READOUT))
    observed = np.where(true_up, u >= ro.p_false_shelve_up, u >= ro.p_detect_down)
    return BatchResult(observed, valid, p_up, ro.observed_up_probability(p_up))


def _heat_variable(state, durations, rate, seed, shots, tag):
    """heating_jumps with per-shot durations (grouped by equal duration)."""
    out = np.array(state.amplitudes)
    for d in np.unique(durations):
        sel = np.nonzero(durations == d)[0]
        sub = IonState(state.amplitudes[sel])
        out[sel] = heating_jumps(sub, float(d), rate, _rng.CounterStream(seed, shots[sel]), tag).amplitudes
    return IonState(out)


def execute_plan(plan: ShotPlan, test_ops, control_ops, machine: Machine, world: NoiseWorld,
                 threads=1) -> BatchResult:
    """Run every shot of a plan; results come back in plan order.

    Work is cut into fixed-size chunks independent of ``threads``, and each
    shot draws only from its own counter stream, so the output does not
    depend on the thread count.
    """
    n = len(plan)
    jobs = []
    for role, ops in ((CONTROL, control_ops), (TEST, test_ops)):
        idx = np.nonzero(plan.role == role)[0]
        if idx.size and ops is None:
            raise ValueError(f"plan has {ROLE_NAMES[role]} shots but no {ROLE_NAMES[role]} sequence")
        for k in range(0, idx.size, EXEC_CHUNK):
            jobs.append((ops, idx[k:k + EXEC_CHUNK]))

    def work(job):
        ops, idx = job
        return idx, run_batch(ops, machine, world, idx, plan.scan_value[idx], plan.variable)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    obs = np.zeros(n, dtype=bool)
    valid = np.zeros(n, dtype=bool)
    p_up = np.zeros(n)
    p_obs = np.zeros(n)
    for idx, r in results:
        obs[idx], valid[idx], p_up[idx], p_obs[idx] = r.observed_up, r.valid, r.p_up, r.p_observed
    return BatchResult(obs, valid, p_up, p_obs)


def execute_shot(seq, scan_value, variable, machine: Machine, world: NoiseWorld, shot_index):
    """Single shot.  Returns the observed outcome, or None if the shot was
    discarded by the preparation policy."""
    r = run_batch(seq, machine, world, [shot_index], [scan_value], variable)
    return bool(r.observed_up[0]) if r.valid[0] else None
