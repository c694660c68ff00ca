from pathlib import Path

import pytest

from gpuleak.errors import ConfigError, KernelFault
from gpuleak.schedule import Schedule, load_schedule, run_schedule

ROOT = Path(__file__).resolve().parents[1]
EXAMPLE = ROOT / "docs" / "examples" / "residue.yaml"


def test_example_schedule_shows_residue():
    run = run_schedule(load_schedule(EXAMPLE))
    probe = run.reads["probe"]
    assert probe[:4] == [7, 7, 7, 7]
    assert probe[4] == 0xDEADBEEF + 4
    summary = run.summary()
    assert summary["cross_context_reads"] == [{"reader": "spy", "owner": "victim", "words": 256}]
    assert summary["contexts"] == {"spy": 2, "victim": 1}


def test_policy_in_schedule_stops_residue():
    sched = load_schedule(EXAMPLE)
    sched.policy = "zero_on_free"
    run = run_schedule(sched)
    assert set(run.reads["probe"]) == {0}
    assert run.summary()["cross_context_reads"] == []


def test_explicit_values_and_free():
    sched = Schedule(steps=[
        {"context": "a", "action": "create"},
        {"context": "a", "action": "alloc", "buffer": "x", "bytes": 16},
        {"context": "a", "action": "write", "buffer": "x", "values": [1, 2, 3, 4]},
        {"context": "a", "action": "read", "buffer": "x"},
        {"context": "a", "action": "free", "buffer": "x"},
    ])
    run = run_schedule(sched)
    assert run.reads == {"a.x": [1, 2, 3, 4]}
    assert not run.sim.memory.live_allocations()


def test_fault_propagates():
    with pytest.raises(KernelFault) as info:
        run_schedule(load_schedule(ROOT / "tests" / "data" / "fault.yaml"))
    assert info.value.ticket == 1 and info.value.instr_index == 1


@pytest.mark.parametrize("text,match", [
    ("steps: 3\n", "steps"),
    ("steps: [{action: teleport, context: a}]\n", "action"),
    ("steps: [{action: create}]\n", "context"),
    ("colour: red\nsteps: []\n", "colour"),
])
def test_malformed_schedules(tmp_path, text, match):
    path = tmp_path / "s.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_schedule(path)


def test_unknown_names():
    with pytest.raises(ConfigError, match="never created"):
        run_schedule(Schedule(steps=[{"context": "ghost", "action": "destroy"}]))
    with pytest.raises(ConfigError, match="never allocated"):
        run_schedule(Schedule(steps=[{"context": "a", "action": "create"},
                                     {"context": "a", "action": "free", "buffer": "b"}]))
