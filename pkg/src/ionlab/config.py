"""TOML run configurations.

A run file looks like::

    schema_version = 1
    experiment = "hyperfine_ramsey"
    seed = 7
    sequence = "ramsey_200ms.seq"        # relative to this file
    control_sequence = "ramsey_control.seq"
    per_shot_overhead = 0.07             # s of dead time per shot

    [machine]
    initial_qubit = 1

    [pulses.pi2]
    duration = 35e-6
    area_pi = 0.5                        # or rabi_frequency (rad/s)

    [noise.field]
    b0 = 1.78

    [scan]
    variable = "frequency"
    start = -5.0
    stop = 5.0
    points = 13

Every validation problem raises :class:`ConfigError` carrying the dotted
path of the offending entry.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .atomic import HyperfineConstants
from .noise import FieldNoiseParams, MotionalNoiseParams, ReadoutParams
from .physics import PulseParams
from .sequencer import (Machine, ScanSpec, SequenceStructureError, SequenceSyntaxError,
                        parse_sequence, serialize_sequence)

SCHEMA_VERSION = 1
EXPERIMENTS = ("hyperfine_ramsey", "spin_echo", "motional_ramsey", "field_calibration")
PULSE_KINDS = {"carrier": "carrier", "red_sideband": "red_sideband", "rsb": "red_sideband"}


class ConfigError(ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    test_ops: tuple
    control_ops: tuple | None
    pulses: dict
    scan: ScanSpec
    constants: HyperfineConstants = HyperfineConstants()
    field_noise: FieldNoiseParams = FieldNoiseParams()
    motion: MotionalNoiseParams = MotionalNoiseParams()
    readout: ReadoutParams = ReadoutParams()
    n_max: int = 0
    initial_qubit: int = 1
    qubit_model: str = "clock"
    motional_detuning: float = 0.0   # Hz
    per_shot_overhead: float = 0.07
    start_time: float = 0.0
    lo_reference: float | None = None
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def machine(self) -> Machine:
        return Machine(self.pulses, self.n_max, self.initial_qubit, self.qubit_model,
                       2 * np.pi * self.motional_detuning)

    def with_sequences(self, test_text, control_text=None):
        test = tuple(parse_sequence(test_text))
        control = tuple(parse_sequence(control_text)) if control_text is not None else None
        _check_pulse_refs(test, self.pulses, "sequence")
        if control is not None:
            _check_pulse_refs(control, self.pulses, "control_sequence")
        return dataclasses.replace(self, test_ops=test, control_ops=control,
                                   scan=dataclasses.replace(self.scan, control_sequence=control))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        """Canonical, JSON-ready description (used for the digest)."""
        def pulse(p):
            return {k: float(v) if isinstance(v, (int, float, np.floating)) else v
                    for k, v in dataclasses.asdict(p).items()}
        return {
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "seed": int(self.seed),
            "sequence": serialize_sequence(self.test_ops),
            "control_sequence": serialize_sequence(self.control_ops) if self.control_ops else None,
            "pulses": {k: pulse(v) for k, v in sorted(self.pulses.items())},
            "scan": {"variable": self.scan.variable, "values": list(self.scan.values),
                     "shots_per_point": self.scan.shots_per_point,
                     "interleave_control": self.scan.interleave_control,
                     "randomize": self.scan.randomize_scan},
            "constants": dataclasses.asdict(self.constants),
            "noise": {"field": dataclasses.asdict(self.field_noise),
                      "motion": dataclasses.asdict(self.motion),
                      "readout": dataclasses.asdict(self.readout)},
            "machine": {"n_max": self.n_max, "initial_qubit": self.initial_qubit,
                        "qubit_model": self.qubit_model,
                        "motional_detuning": self.motional_detuning},
            "per_shot_overhead": self.per_shot_overhead,
            "start_time": self.start_time,
            "lo_reference": self.lo_reference,
            "extra": self.extra,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _check_pulse_refs(ops, pulses, where):
    for op in ops:
        if op.kind == "pulse" and op.name not in pulses:
            raise ConfigError(f"{where}:line {op.line}", f"undefined pulse {op.name!r}")


def _table(d, key, path):
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigError(f"{path}{key}", "expected a table")
    return v


def _build(cls, table, path, renames=None):
    """Instantiate a dataclass from a TOML table, mapping errors to a path."""
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for k, v in table.items():
        key = (renames or {}).get(k, k)
        if key not in names:
            raise ConfigError(f"{path}.{k}", "unknown key")
        kw[key] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _pulse(name, t):
    path = f"pulses.{name}"
    t = dict(t)
    if "duration" not in t:
        raise ConfigError(f"{path}.duration", "missing")
    kind = PULSE_KINDS.get(t.pop("kind", "carrier"))
    if kind is None:
        raise ConfigError(f"{path}.kind", "must be 'carrier' or 'red_sideband'")
    has_rabi, has_area = "rabi_frequency" in t, "area_pi" in t
    if has_rabi == has_area:
        raise ConfigError(path, "give exactly one of rabi_frequency or area_pi")
    duration = float(t["duration"])
    if has_area:
        if duration <= 0:
            raise ConfigError(f"{path}.duration", "must be > 0 when area_pi is used")
        eta = float(t.get("lamb_dicke", 0.1)) if kind == "red_sideband" else 1.0
        t["rabi_frequency"] = float(t.pop("area_pi")) * np.pi / (duration * eta)
    t["kind"] = kind
    return _build(PulseParams, t, path)


def _scan(t, control_ops):
    path = "scan"
    t = dict(t)
    if "variable" not in t:
        raise ConfigError(f"{path}.variable", "missing")
    if "values" in t:
        if any(k in t for k in ("start", "stop", "points")):
            raise ConfigError(path, "give either values or start/stop/points")
        values = t.pop("values")
    else:
        try:
            values = np.linspace(float(t.pop("start")), float(t.pop("stop")), int(t.pop("points")))
        except KeyError as exc:
            raise ConfigError(f"{path}.{exc.args[0]}", "missing") from None
    if "randomize" in t:
        t["randomize_scan"] = t.pop("randomize")
    t["values"] = tuple(float(v) for v in values)
    t["control_sequence"] = control_ops
    return _build(ScanSpec, t, path)


def _read_sequence(raw, key, base_dir):
    if f"{key}_text" in raw:
        return raw[f"{key}_text"], f"{key}_text"
    if key not in raw:
        return None, key
    p = Path(raw[key])
    if not p.is_absolute():
        p = base_dir / p
    try:
        return p.read_text(encoding="utf-8"), f"{key}({p.name})"
    except OSError as exc:
        raise ConfigError(key, f"cannot read {p}: {exc.strerror}") from None


def _parse_ops(text, where):
    try:
        return tuple(parse_sequence(text))
    except SequenceSyntaxError as exc:
        raise ConfigError(f"{where}:line {exc.line}", str(exc)) from None
    except SequenceStructureError as exc:
        raise ConfigError(where, str(exc)) from None


def config_from_dict(raw: dict, base_dir=".") -> RunConfig:
    base_dir = Path(base_dir)
    known = {"schema_version", "experiment", "seed", "sequence", "sequence_text",
             "control_sequence", "control_sequence_text", "per_shot_overhead", "start_time",
             "lo_reference", "machine", "pulses", "constants", "noise", "scan", "output", "extra"}
    for k in raw:
        if k not in known:
            raise ConfigError(k, "unknown key")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    kind = raw.get("experiment")
    if kind not in EXPERIMENTS:
        raise ConfigError("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
    if "seed" not in raw:
        raise ConfigError("seed", "missing (runs are never seeded from the clock)")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed", "must be an integer in [0, 2**64)")

    pulses = {name: _pulse(name, t) for name, t in _table(raw, "pulses", "").items()}
    text, where = _read_sequence(raw, "sequence", base_dir)
    if text is None:
        raise ConfigError("sequence", "missing")
    test_ops = _parse_ops(text, where)
    _check_pulse_refs(test_ops, pulses, where)
    ctext, cwhere = _read_sequence(raw, "control_sequence", base_dir)
    control_ops = None
    if ctext is not None:
        control_ops = _parse_ops(ctext, cwhere)
        _check_pulse_refs(control_ops, pulses, cwhere)

    noise = _table(raw, "noise", "")
    for k in noise:
        if k not in ("field", "motion", "readout"):
            raise ConfigError(f"noise.{k}", "unknown noise block")
    machine = _table(raw, "machine", "")
    for k in machine:
        if k not in ("n_max", "initial_qubit", "qubit_model", "motional_detuning"):
            raise ConfigError(f"machine.{k}", "unknown key")
    cfg = RunConfig(
        experiment=kind,
        seed=seed,
        test_ops=test_ops,
        control_ops=control_ops,
        pulses=pulses,
        scan=_scan(_table(raw, "scan", ""), control_ops),
        constants=_build(HyperfineConstants, _table(raw, "constants", ""), "constants"),
        field_noise=_build(FieldNoiseParams, _table(noise, "field", "noise."), "noise.field"),
        motion=_build(MotionalNoiseParams, _table(noise, "motion", "noise."), "noise.motion"),
        readout=_build(ReadoutParams, _table(noise, "readout", "noise."), "noise.readout"),
        per_shot_overhead=float(raw.get("per_shot_overhead", 0.07)),
        start_time=float(raw.get("start_time", 0.0)),
        lo_reference=raw.get("lo_reference"),
        outputs=dict(_table(raw, "output", "")),
        extra=dict(_table(raw, "extra", "")),
        **machine,
    )
    try:
        cfg.machine()
    except ValueError as exc:
        raise ConfigError("machine", str(exc)) from None
    if cfg.per_shot_overhead < 0:
        raise ConfigError("per_shot_overhead", "must be >= 0")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("", f"{path}: {exc}") from None
    return config_from_dict(raw, path.parent)


def preset_dir() -> Path:
    return Path(str(resources.files("ionlab") / "presets"))


def load_preset(name) -> RunConfig:
    return load_config(preset_dir() / f"{name}.toml")
