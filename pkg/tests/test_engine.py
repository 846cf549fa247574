import pytest

from src.engine import Simulator, Trigger
from src.errors import ConfigError, LivelockError, SimulationError
from src.models import CostModel, Location, Machine, NetMode, NetParams
from src.network import Network


def test_simultaneous_events_fire_in_scheduling_order():
    sim = Simulator()
    fired = []
    sim.schedule(5, lambda: fired.append("b"), "b")
    sim.schedule(5, lambda: fired.append("c"), "c")
    sim.schedule(1, lambda: fired.append("a"), "a")
    assert sim.run() == 5
    assert fired == ["a", "b", "c"]


def test_events_scheduled_from_actions_use_current_time():
    sim = Simulator()
    seen = []

    def first():
        seen.append(sim.now())
        sim.schedule(10, lambda: seen.append(sim.now()))

    sim.schedule(3, first)
    sim.run()
    assert seen == [3, 13]


def test_negative_delay_is_rejected():
    sim = Simulator()
    with pytest.raises(ConfigError):
        sim.schedule(-1, lambda: None)


def test_schedule_at_in_the_past_is_rejected():
    sim = Simulator()
    sim.schedule(10, lambda: sim.schedule_at(5, lambda: None, "late"))
    with pytest.raises(ConfigError, match="late"):
        sim.run()


def test_cancelled_event_never_fires():
    sim = Simulator()
    fired = []
    handle = sim.schedule(4, lambda: fired.append("x"))
    sim.schedule(2, lambda: fired.append("y"))
    assert sim.cancel(handle)
    assert not sim.cancel(handle)
    sim.run()
    assert fired == ["y"]
    assert sim.pending == 0


def test_watchdog_names_the_busy_entity():
    sim = Simulator(max_events=50)

    def spin():
        sim.schedule(0, spin, "spinner")

    sim.schedule(0, spin, "spinner")
    with pytest.raises(LivelockError) as info:
        sim.run()
    assert info.value.entity == "spinner"
    assert "spinner" in str(info.value)


def test_trace_hash_is_deterministic_and_sensitive():
    def build(delay):
        sim = Simulator(record_trace=True)
        sim.schedule(1, lambda: None, "a")
        sim.schedule(delay, lambda: None, "b")
        sim.run()
        return sim

    first, second, other = build(7), build(7), build(8)
    assert first.trace == [(1, 0, "a"), (7, 1, "b")]
    assert first.trace_hash == second.trace_hash
    assert first.trace_hash != other.trace_hash


def test_trigger_runs_late_waiters_immediately():
    sim = Simulator()
    trigger = Trigger(sim, "t")
    seen = []
    trigger.add_waiter(lambda t: seen.append("early"))
    sim.schedule(4, trigger.fire)
    sim.run()
    trigger.add_waiter(lambda t: seen.append("late"))
    assert seen == ["early", "late"]
    assert trigger.fire_time == 4
    with pytest.raises(SimulationError):
        trigger.fire()


def test_all_of_fires_after_the_last_input():
    sim = Simulator()
    parts = [Trigger(sim, str(i)) for i in range(3)]
    joined = Trigger.all_of(sim, parts, "join")
    for delay, part in zip((3, 9, 5), parts):
        sim.schedule(delay, part.fire)
    sim.run()
    assert joined.fired and joined.fire_time == 9
    assert Trigger.all_of(sim, [], "empty").fired


def test_every_scheduled_event_fires_or_is_cancelled():
    sim = Simulator(max_events=10_000)
    machine = Machine(nodes=2, pes_per_node=1, gpus_per_node=1)
    network = Network(sim, machine, NetParams(alpha=0.0, beta=1e9, contention=True), CostModel(), NetMode.DEVICE_DIRECT)
    for i, size in enumerate((3000, 1000, 2000)):
        sim.schedule(i * 500_000, lambda s=size: network.transfer(0, 1, s, Location.DEVICE, None, lambda: None))
    sim.cancel(sim.schedule(10**9, lambda: None))
    sim.run()
    assert sim.cancelled > 1
    assert sim.scheduled == sim.fired + sim.cancelled
    assert sim.pending == 0
