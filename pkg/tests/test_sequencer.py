import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ionlab.config import load_preset
from ionlab.noise import IDEAL_READOUT, realize_world
from ionlab.physics import PulseParams
from ionlab.sequencer import (CONTROL, TEST, Machine, ScanSpec, SequenceStructureError,
                              SequenceSyntaxError, build_shot_plan, execute_plan, execute_shot,
                              parse_sequence, run_batch, serialize_sequence)

RAMSEY = """# comment line
prepare
pulse pi2 mw
delay 0.2      # tau_L
pulse pi2 mw phase=$scan
measure
"""


def test_parse_basic():
    ops = parse_sequence(RAMSEY)
    assert [o.kind for o in ops] == ["prepare", "pulse", "delay", "pulse", "measure"]
    assert ops[2].duration == 0.2 and ops[2].line == 4
    assert ops[3].phase_scan and ops[1].channel == "microwave"


@pytest.mark.parametrize("text,line,col", [
    ("prepare\nwait 3\nmeasure", 2, 1),
    ("prepare\ndelay -1\nmeasure", 2, 7),
    ("prepare\n  pulse pi2 laser\nmeasure", 2, 13),
    ("prepare\npulse pi2 mw phase=x\nmeasure", 2, 20),
    ("prepare\ncool abc\nmeasure", 2, 6),
])
def test_syntax_errors_carry_position(text, line, col):
    with pytest.raises(SequenceSyntaxError) as e:
        parse_sequence(text)
    assert (e.value.line, e.value.column) == (line, col)


@pytest.mark.parametrize("text", ["", "pulse a mw\nmeasure", "prepare\nprepare\nmeasure",
                                  "prepare\ndelay 1"])
def test_structure_errors(text):
    with pytest.raises(SequenceStructureError):
        parse_sequence(text)


op_lines = st.one_of(
    st.builds(lambda d: f"delay {d!r}", st.floats(0, 10)),
    st.builds(lambda d: f"delay {d!r}+$scan", st.floats(0, 10)),
    st.just("delay $scan"),
    st.builds(lambda n: f"cool {n!r}", st.floats(0, 5)),
    st.builds(lambda name, ch, ph: f"pulse {name} {ch}" + ("" if ph is None else f" phase={ph!r}"),
              st.sampled_from(["pi2", "pi", "x_1"]), st.sampled_from(["mw", "carrier", "rsb"]),
              st.one_of(st.none(), st.floats(-7, 7))),
)


@settings(max_examples=80, deadline=None)
@given(st.lists(op_lines, max_size=8))
def test_serialize_round_trip(lines):
    ops = parse_sequence("\n".join(["prepare", *lines, "measure"]))
    again = parse_sequence(serialize_sequence(ops))
    assert again == ops


def test_fig1_plan_duration_and_order():
    cfg = load_preset("fig1")
    plan = build_shot_plan(list(cfg.test_ops), cfg.scan, cfg.per_shot_overhead, cfg.pulses)
    assert len(plan) == 2 * 13 * 500
    assert plan.total_duration / 60 == pytest.approx(36.86, abs=0.01)
    # interleaved control/test pairs, scan descending point by point
    assert list(plan.role[:4]) == [CONTROL, TEST, CONTROL, TEST]
    assert np.all(np.diff(plan.scan_value[plan.role == TEST]) <= 0)
    assert np.all(np.diff(plan.wall_clock_start) > 0)


def test_randomized_plan_is_permutation():
    scan = ScanSpec("frequency", (1.0, 2.0, 3.0), 50, randomize_scan=True)
    ops = parse_sequence("prepare\nmeasure")
    a = build_shot_plan(ops, scan, 0.1, {}, seed=1)
    b = build_shot_plan(ops, scan, 0.1, {}, seed=2)
    assert np.bincount(a.point).tolist() == [50, 50, 50]
    assert not np.array_equal(a.point, b.point)
    assert a.digest() == build_shot_plan(ops, scan, 0.1, {}, seed=1).digest()


def _ramsey_setup(n=600):
    ops = parse_sequence(RAMSEY)
    pulses = {"pi2": PulseParams(np.pi / 2 / 35e-6, 35e-6)}
    scan = ScanSpec("phase", tuple(np.linspace(0, 2 * np.pi, 6)), n, interleave_control=False)
    plan = build_shot_plan(ops, scan, 0.07, pulses)
    machine = Machine(pulses, initial_qubit=0)
    world = realize_world(3, plan.wall_clock_start, readout=IDEAL_READOUT)
    return ops, plan, machine, world


def test_ideal_ramsey_fringe_from_down():
    ops, plan, machine, world = _ramsey_setup()
    r = execute_plan(plan, ops, None, machine, world)
    np.testing.assert_allclose(r.p_up, (1 + np.cos(plan.scan_value)) / 2, atol=1e-6)


def test_thread_count_does_not_change_outcomes():
    ops, plan, machine, world = _ramsey_setup(2000)
    a = execute_plan(plan, ops, None, machine, world, threads=1)
    b = execute_plan(plan, ops, None, machine, world, threads=4)
    np.testing.assert_array_equal(a.observed_up, b.observed_up)


def test_single_shot_matches_batch():
    ops, plan, machine, world = _ramsey_setup(20)
    r = run_batch(ops, machine, world, np.arange(len(plan)), plan.scan_value, plan.variable)
    for i in (0, 7, 100):
        assert execute_shot(ops, plan.scan_value[i], plan.variable, machine, world, i) == r.observed_up[i]


def test_machine_validation():
    with pytest.raises(ValueError):
        Machine({}, qubit_model="zeeman")
    with pytest.raises(ValueError):
        Machine({}, initial_qubit=2)
    with pytest.raises(ValueError):
        dataclasses.replace(ScanSpec("phase", (0.0,)), variable="time")
