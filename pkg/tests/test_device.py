import pytest

from src.device import (
    Device,
    DeviceOp,
    GraphNode,
    OpKind,
    Priority,
    copy_duration_ps,
    graph_capture,
    kernel_duration_ps,
)
from src.engine import Simulator
from src.errors import ConfigError
from src.models import CostModel, Machine
from src.runtime import Runtime

US = 1_000_000

COST = CostModel(
    t_launch=5e-6,
    t_graph_launch=10e-6,
    t_kernel_fixed=2e-6,
    kernel_rate=1e9,
    pack_rate=1e9,
    pcie_bw=1e9,
    pcie_lat=1e-6,
    entry_cost=0.0,
    msg_cost=0.0,
)


def kernel(work=1000, name="k", **kw):
    return DeviceOp(OpKind.KERNEL, work, name=name, rate=1e9, **kw)


def test_duration_formulas():
    assert kernel_duration_ps(COST, 8000, 1e9) == 10 * US
    assert kernel_duration_ps(COST, 1000, 1e9) == 3 * US
    assert kernel_duration_ps(CostModel(t_kernel_fixed=0.0), 1000, 1e9) == US
    assert copy_duration_ps(COST, 1000) == 2 * US
    with pytest.raises(ConfigError):
        kernel_duration_ps(COST, 10, 0.0)


def test_small_kernel_on_a_wide_device_runs_at_the_full_rate():
    sim = Simulator()
    dev = Device(sim, 0, CostModel(t_kernel_fixed=0.0), slots=8)
    op = kernel(work=1000)
    dev.enqueue(None, dev.create_stream(Priority.LOW), op)
    sim.run()
    assert (op.start, op.end) == (0, US)


def test_stream_is_fifo_and_high_priority_wins_the_pool():
    sim = Simulator()
    dev = Device(sim, 0, COST, slots=1)
    low = dev.create_stream(Priority.LOW, "low")
    high = dev.create_stream(Priority.HIGH, "high")
    a, b, c = kernel(name="a"), kernel(name="b"), kernel(name="c")
    dev.enqueue(None, low, a)
    dev.enqueue(None, low, b)
    dev.enqueue(None, high, c)
    sim.run()
    assert (c.start, c.end) == (0, 3 * US)
    assert (a.start, a.end) == (3 * US, 6 * US)
    assert (b.start, b.end) == (6 * US, 9 * US)
    assert dev.busy_intervals == [(0, 3 * US), (3 * US, 6 * US), (6 * US, 9 * US)]


def test_copy_engines_overlap_kernels():
    sim = Simulator()
    dev = Device(sim, 0, COST, slots=8)
    ops = [
        kernel(work=8000),
        DeviceOp(OpKind.COPY_D2H, 1000, name="d2h"),
        DeviceOp(OpKind.COPY_H2D, 1000, name="h2d"),
    ]
    for i, op in enumerate(ops):
        dev.enqueue(None, dev.create_stream(Priority.HIGH, f"s{i}"), op)
    sim.run()
    assert [op.start for op in ops] == [0, 0, 0]
    assert [op.end for op in ops] == [10 * US, 2 * US, 2 * US]


def test_each_executing_kernel_holds_one_slot():
    sim = Simulator()
    dev = Device(sim, 0, COST, slots=2)
    ops = [kernel(name=f"k{i}") for i in range(3)]
    for i, op in enumerate(ops):
        dev.enqueue(None, dev.create_stream(Priority.LOW, f"s{i}"), op)
    sim.run()
    assert [op.start for op in ops] == [0, 0, 3 * US]
    assert [op.end - op.start for op in ops] == [3 * US] * 3
    assert dev.peak_slots_in_use == 2


def test_cross_stream_dependency():
    sim = Simulator()
    dev = Device(sim, 0, COST, slots=8)
    s1, s2 = dev.create_stream(Priority.LOW), dev.create_stream(Priority.HIGH)
    first = dev.enqueue(None, s1, kernel(work=8000))
    second = kernel(name="second")
    dev.enqueue(None, s2, second, deps=[first])
    sim.run()
    assert second.start == 10 * US


def test_enqueue_charges_launch_cost_on_the_host():
    sim = Simulator()
    rt = Runtime(sim, Machine(), entry_cost=0.0, msg_cost=0.0)
    dev = Device(sim, 0, COST, slots=8, runtime=rt)
    array = rt.create_chare_array("a", (1, 1, 1))
    s1, s2 = dev.create_stream(Priority.LOW), dev.create_stream(Priority.LOW)
    ops = [kernel(name="x"), kernel(name="y")]

    def launch(ctx, chare, msg):
        dev.enqueue(ctx, s1, ops[0])
        dev.enqueue(ctx, s2, ops[1])

    rt.register_entry(array, "go", launch)
    rt.invoke(None, array, (0, 0, 0), "go")
    sim.run()
    assert [op.start for op in ops] == [5 * US, 10 * US]
    assert rt.pes[0].busy_intervals == [(0, 10 * US)]


def test_on_complete_delivers_callback_without_blocking():
    sim = Simulator()
    rt = Runtime(sim, Machine(), entry_cost=0.0, msg_cost=0.0)
    dev = Device(sim, 0, COST, slots=1, runtime=rt)
    array = rt.create_chare_array("a", (1, 1, 1))
    stream = dev.create_stream(Priority.LOW)
    seen = []
    cb = rt.register_callback(array[(0, 0, 0)], continuation=lambda ctx, msg: seen.append((sim.now(), msg.refnum)))

    def launch(ctx, chare, msg):
        dev.on_complete(dev.enqueue(ctx, stream, kernel()), cb, refnum=3)

    rt.register_entry(array, "go", launch)
    rt.invoke(None, array, (0, 0, 0), "go")
    sim.run()
    assert seen == [(8 * US, 3)]
    assert rt.pes[0].busy_intervals[0] == (0, 5 * US)


def test_synchronize_blocks_until_the_stream_drains():
    sim = Simulator()
    rt = Runtime(sim, Machine(), entry_cost=0.0, msg_cost=0.0)
    dev = Device(sim, 0, COST, slots=1, runtime=rt)
    array = rt.create_chare_array("a", (1, 1, 1))
    stream = dev.create_stream(Priority.LOW)
    cursors = []

    def launch(ctx, chare, msg):
        dev.enqueue(ctx, stream, kernel())
        dev.synchronize(ctx, stream, lambda c: cursors.append(c.cursor))

    rt.register_entry(array, "go", launch)
    rt.invoke(None, array, (0, 0, 0), "go")
    sim.run()
    assert cursors == [8 * US]
    assert rt.pes[0].busy_intervals == [(0, 8 * US)]


def test_stream_from_another_device_is_rejected():
    sim = Simulator()
    dev0, dev1 = Device(sim, 0, COST, 8), Device(sim, 1, COST, 8)
    stream = dev1.create_stream(Priority.LOW)
    with pytest.raises(ConfigError):
        dev0.enqueue(None, stream, kernel())


def test_graph_capture_rejects_cycles_and_unknown_deps():
    cyclic = [
        GraphNode(OpKind.KERNEL, 10, "a", 1e9, deps=(1,)),
        GraphNode(OpKind.KERNEL, 10, "b", 1e9, deps=(0,)),
    ]
    with pytest.raises(ConfigError, match="cycle"):
        graph_capture(cyclic, 0)
    with pytest.raises(ConfigError):
        graph_capture([GraphNode(OpKind.KERNEL, 10, "a", 1e9, deps=(4,))], 0)


def test_graph_launch_is_one_host_launch_and_becomes_the_stream_tail():
    sim = Simulator()
    rt = Runtime(sim, Machine(), entry_cost=0.0, msg_cost=0.0)
    dev = Device(sim, 0, COST, slots=1, runtime=rt)
    array = rt.create_chare_array("a", (1, 1, 1))
    stream = dev.create_stream(Priority.LOW)
    graph = graph_capture(
        [
            GraphNode(OpKind.KERNEL, 1000, "first", 1e9),
            GraphNode(OpKind.KERNEL, 1000, "second", 1e9, deps=(0,)),
        ],
        variant=1,
    )
    after = kernel(name="after")
    done = []

    def launch(ctx, chare, msg):
        join = dev.graph_launch(ctx, graph, stream, owner=(0, 0, 0), tag=4)
        join.add_waiter(lambda e: done.append(sim.now()))
        dev.enqueue(ctx, stream, after)

    rt.register_entry(array, "go", launch)
    rt.invoke(None, array, (0, 0, 0), "go")
    sim.run()
    assert done == [16 * US]
    assert after.start == 16 * US
    record = dev.launches[((0, 0, 0), 4)]
    assert (record.graphs, record.kernels, record.variants) == (1, 0, [1])


DAG = [
    GraphNode(OpKind.KERNEL, 1000, "a", 1e9),
    GraphNode(OpKind.KERNEL, 2000, "b", 1e9, deps=(0,)),
    GraphNode(OpKind.KERNEL, 1000, "c", 1e9, deps=(0,)),
    GraphNode(OpKind.KERNEL, 500, "d", 1e9, deps=(1, 2)),
]


def enqueue_dag(dev, ctx, nodes):
    events = []
    for i, node in enumerate(nodes):
        op = DeviceOp(node.kind, node.work, name=node.name, rate=node.rate)
        stream = dev.create_stream(Priority.HIGH, f"s{i}")
        events.append(dev.enqueue(ctx, stream, op, deps=[events[d] for d in node.deps]))
    return events[-1]


def test_graph_runs_the_same_device_schedule_as_individual_launches():
    intervals = []
    for use_graph in (False, True):
        sim = Simulator()
        dev = Device(sim, 0, COST, slots=8)
        if use_graph:
            dev.graph_launch(None, graph_capture(DAG, 0), dev.create_stream(Priority.HIGH))
        else:
            enqueue_dag(dev, None, DAG)
        sim.run()
        intervals.append(sorted(dev.busy_intervals))
    assert intervals[0] == intervals[1]
    assert intervals[0] == [(0, 3 * US), (3 * US, 6 * US), (3 * US, 7 * US), (7 * US, 9_500_000)]


def test_graph_launch_costs_one_host_launch_for_the_whole_dag():
    def host_busy(use_graph):
        sim = Simulator()
        rt = Runtime(sim, Machine(), entry_cost=0.0, msg_cost=0.0)
        dev = Device(sim, 0, COST, slots=8, runtime=rt)
        array = rt.create_chare_array("a", (1, 1, 1))

        def launch(ctx, chare, msg):
            if use_graph:
                dev.graph_launch(ctx, graph_capture(DAG, 0), dev.create_stream(Priority.HIGH))
            else:
                enqueue_dag(dev, ctx, DAG)

        rt.register_entry(array, "go", launch)
        rt.invoke(None, array, (0, 0, 0), "go")
        sim.run()
        return rt.pes[0].busy_intervals

    assert host_busy(False) == [(0, len(DAG) * 5 * US)]
    assert host_busy(True) == [(0, 10 * US)]


def test_host_time_does_not_depend_on_kernel_length():
    def busy(work):
        sim = Simulator()
        rt = Runtime(sim, Machine(), entry_cost=1e-6, msg_cost=0.0)
        dev = Device(sim, 0, COST, slots=1, runtime=rt)
        array = rt.create_chare_array("a", (1, 1, 1))
        stream = dev.create_stream(Priority.LOW)
        cb = rt.register_callback(array[(0, 0, 0)], continuation=lambda ctx, msg: None)

        def launch(ctx, chare, msg):
            dev.on_complete(dev.enqueue(ctx, stream, kernel(work=work)), cb)

        rt.register_entry(array, "go", launch)
        rt.invoke(None, array, (0, 0, 0), "go")
        sim.run()
        return [end - start for start, end in rt.pes[0].busy_intervals]

    assert busy(1000) == busy(10**6) == [6 * US, US]
