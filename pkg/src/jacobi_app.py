"""Jacobi3D on the simulated machine.

One chare array covers the decomposition. Charm modes run every block as an
asynchronous message-driven worker (callbacks, `when` on the iteration
refnum, device completion via on_complete); MPI modes run one bulk-synchronous
rank per PE that blocks in synchronize and waitall.
"""

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .device import Device, DeviceEvent, DeviceGraph, DeviceOp, GraphNode, OpKind, Priority, Stream, graph_capture
from .engine import Simulator, Trigger
from .errors import ConfigError, SimulationError
from .models import (
    Fusion,
    LaunchMode,
    LaunchRecord,
    Location,
    MetricRow,
    MetricsTable,
    Scenario,
    SyncPolicy,
)
from .network import Channel, Network
from .runtime import Chare, ExecContext, Message, Runtime
from .scenario import validate_scenario
from .stencil import DIRECTIONS, JacobiBlock, assemble, decompose, interior_elements, opposite
from .utils import covered_within, merge_intervals

SETUP_TAG = -1
START_ENTRY = "start"
HALO_ENTRY = "recvHalo"


@dataclass
class StreamSet:
    compute: Stream
    pack: Stream
    d2h: Stream
    h2d: Stream


def make_streams(device: Device, sync: SyncPolicy, owner: str) -> StreamSet:
    """Optimized: 1 low + 3 high priority streams. Baseline: compute + one transfer stream."""
    compute = device.create_stream(Priority.LOW, f"{owner}.compute")
    if sync is SyncPolicy.BASELINE:
        transfer = device.create_stream(Priority.HIGH, f"{owner}.transfer")
        return StreamSet(compute, transfer, transfer, transfer)
    return StreamSet(
        compute,
        device.create_stream(Priority.HIGH, f"{owner}.pack"),
        device.create_stream(Priority.HIGH, f"{owner}.d2h"),
        device.create_stream(Priority.HIGH, f"{owner}.h2d"),
    )


class BlockWorker:
    """Per-chare state shared by both drivers: block data, streams and channels."""

    def __init__(self, app: "JacobiSimulation", chare: Chare) -> None:
        self.app = app
        self.chare = chare
        run = app.scenario.run
        self.mode = run.mode
        self.fusion = run.fusion
        self.sync = run.sync
        self.block = JacobiBlock(chare.index, app.decomp, numerics=run.numerics, debug=run.debug)
        self.device = app.device_for_pe(chare.pe)
        self.streams = make_streams(self.device, run.sync, chare.name)
        self.links: Dict[int, Tuple[Channel, int]] = {}
        self.last_update: Optional[DeviceEvent] = None
        self.location = Location.DEVICE if self.mode.device_comm else Location.HOST

    @property
    def owner(self):
        return self.chare.index

    @property
    def host_staged(self) -> bool:
        return not self.mode.device_comm

    def kernel(
        self,
        ctx: ExecContext,
        stream: Stream,
        name: str,
        work: int,
        rate: float,
        effect: Callable[[], None],
        tag: int,
        deps: Sequence[Optional[DeviceEvent]] = (),
        compute: bool = False,
    ) -> DeviceEvent:
        op = DeviceOp(
            OpKind.KERNEL,
            work,
            name=f"{self.chare.name}.{name}",
            rate=rate,
            effect=effect,
            compute=compute,
            owner=self.owner,
            tag=tag,
        )
        return self.device.enqueue(ctx, stream, op, deps)

    def copy(self, ctx: ExecContext, kind: OpKind, d: int, tag: int, deps: Sequence[DeviceEvent] = ()) -> DeviceEvent:
        stream = self.streams.d2h if kind is OpKind.COPY_D2H else self.streams.h2d
        op = DeviceOp(kind, self.block.face_bytes(d), name=f"{self.chare.name}.{kind.value}{DIRECTIONS[d]}", tag=tag)
        return self.device.enqueue(ctx, stream, op, deps)

    def launch_packs(self, ctx: ExecContext, tag: int, src: int, deps: Sequence[DeviceEvent]) -> Optional[DeviceEvent]:
        """Pack every face of buffer src; returns the event that gates the sends."""
        dirs = self.block.neighbor_dirs
        if not dirs:
            return None
        block, rate = self.block, self.app.scenario.cost.pack_rate
        if self.fusion is Fusion.NONE:
            packs = {
                d: self.kernel(ctx, self.streams.pack, f"pack{DIRECTIONS[d]}", block.face_elements(d), rate,
                               lambda d=d: block.pack(d, src), tag, deps)
                for d in dirs
            }
        else:
            fused = self.kernel(ctx, self.streams.pack, "pack*", block.max_face_elements(), rate,
                                lambda: block.pack_all(src), tag, deps)
            packs = {d: fused for d in dirs}
        last = packs[dirs[-1]]
        if self.host_staged:
            for d in dirs:
                last = self.copy(ctx, OpKind.COPY_D2H, d, tag, [packs[d]])
        return last

    def launch_unpack(self, ctx: ExecContext, d: int, dst: int, tag: int) -> DeviceEvent:
        deps: List[DeviceEvent] = []
        if self.host_staged:
            deps.append(self.copy(ctx, OpKind.COPY_H2D, d, tag))
        block = self.block
        return self.kernel(ctx, self.streams.pack, f"unpack{DIRECTIONS[d]}", block.face_elements(d),
                           self.app.scenario.cost.pack_rate, lambda: block.unpack(d, dst), tag, deps)

    def launch_update(
        self, ctx: ExecContext, src: int, dst: int, tag: int, part: str = "full", deps: Sequence[DeviceEvent] = ()
    ) -> DeviceEvent:
        block = self.block
        interior = interior_elements(block.block)
        if part == "interior":
            work, effect = interior, (lambda: block.interior_update(src, dst))
        elif part == "exterior":
            work, effect = block.elements - interior, (lambda: block.exterior_update(src, dst))
        else:
            work, effect = block.elements, (lambda: block.update(src, dst))
        return self.kernel(ctx, self.streams.compute, f"update-{part}", work, self.app.scenario.cost.kernel_rate,
                           effect, tag, deps, compute=True)

    def post_exchange(self, ctx: ExecContext, it: int, sends_first: bool, done_for: Callable[[str, int], object]) -> None:
        """Post one recv and one send per neighbor with refnum it."""
        net, block = self.app.network, self.block
        dirs = block.neighbor_dirs

        def recvs() -> None:
            for d in dirs:
                channel, side = self.links[d]
                net.channel_recv(ctx, channel, side, self.location, block.face_bytes(d), done_for("recv", d),
                                 refnum=it, payload=("recv", d), sink=lambda data, d=d: block.receive(d, data))

        def sends() -> None:
            for d in dirs:
                channel, side = self.links[d]
                net.channel_send(ctx, channel, side, self.location, block.face_bytes(d), done_for("send", d),
                                 refnum=it, payload=("send", d), data=block.send[d])

        if sends_first:
            sends()
            recvs()
        else:
            recvs()
            sends()

    def mark_end(self, it: int, event: DeviceEvent) -> None:
        event.add_waiter(lambda _e: self.app.record_end(it))


class CharmWorker(BlockWorker):
    def __init__(self, app: "JacobiSimulation", chare: Chare) -> None:
        super().__init__(app, chare)
        rt = app.runtime
        self.exchange_cb = rt.register_callback(chare, continuation=self._on_exchange)
        self.finish_cb = rt.register_callback(chare, continuation=self._on_finish, uses=1)
        self.halo_cb = rt.register_callback(chare, entry=HALO_ENTRY)
        self.remaining = 0
        self.graphs: List[DeviceGraph] = []
        if app.scenario.run.launch is LaunchMode.GRAPH:
            self.graphs = [graph_capture(self._graph_nodes(v), v) for v in (0, 1)]

    def _graph_nodes(self, v: int) -> List[GraphNode]:
        """Frozen DAG for one buffer binding: unpack into v, update v -> 1-v, pack from 1-v."""
        block, cost = self.block, self.app.scenario.cost
        dirs = block.neighbor_dirs
        src, dst = v, 1 - v
        if self.fusion is Fusion.C:
            return [GraphNode(OpKind.KERNEL, block.elements, "fused", cost.kernel_rate, Priority.LOW,
                              effect=self._fused_effect(src, dst), compute=True)]
        nodes: List[GraphNode] = []
        if self.fusion is Fusion.B and dirs:
            nodes.append(GraphNode(OpKind.KERNEL, block.max_face_elements(), "unpack*", cost.pack_rate,
                                   effect=lambda: block.unpack_all(src)))
        else:
            for d in dirs:
                nodes.append(GraphNode(OpKind.KERNEL, block.face_elements(d), f"unpack{DIRECTIONS[d]}",
                                       cost.pack_rate, effect=lambda d=d: block.unpack(d, src)))
        update = len(nodes)
        nodes.append(GraphNode(OpKind.KERNEL, block.elements, "update", cost.kernel_rate, Priority.LOW,
                               deps=tuple(range(update)), effect=lambda: block.update(src, dst), compute=True))
        if self.fusion is Fusion.NONE:
            for d in dirs:
                nodes.append(GraphNode(OpKind.KERNEL, block.face_elements(d), f"pack{DIRECTIONS[d]}",
                                       cost.pack_rate, deps=(update,), effect=lambda d=d: block.pack(d, dst)))
        elif dirs:
            nodes.append(GraphNode(OpKind.KERNEL, block.max_face_elements(), "pack*", cost.pack_rate,
                                   deps=(update,), effect=lambda: block.pack_all(dst)))
        return nodes

    def _fused_effect(self, src: int, dst: int) -> Callable[[], None]:
        block = self.block

        def run() -> None:
            block.unpack_all(src)
            block.update(src, dst)
            if block.neighbor_dirs:
                block.pack_all(dst)

        return run

    # ---- entry points ----
    def start(self, ctx: ExecContext) -> None:
        last = self.launch_packs(ctx, SETUP_TAG, self.block.cur, ())
        self._await(ctx, last, 0)

    def _await(self, ctx: ExecContext, event: Optional[DeviceEvent], it: int) -> None:
        rt = self.app.runtime
        if it == self.app.total_iterations:
            self.device.on_complete(event, self.finish_cb, it)
        elif event is None:
            ctx.at_cursor(lambda: rt.invoke_callback(self.exchange_cb, it), f"pe{ctx.pe.id}")
        else:
            self.device.on_complete(event, self.exchange_cb, it)

    def _on_exchange(self, ctx: ExecContext, msg: Message) -> None:
        it = msg.refnum
        if self.sync is SyncPolicy.OPTIMIZED and it > 0:
            self.block.swap()
        self.post_exchange(ctx, it, sends_first=True, done_for=lambda _kind, _d: self.halo_cb)
        self.remaining = 2 * len(self.block.neighbor_dirs)
        if self.remaining == 0:
            self._after_halos(ctx, it)
        else:
            self.app.runtime.when(ctx, self.chare, HALO_ENTRY, it, self._on_halo)

    def _on_halo(self, ctx: ExecContext, msg: Message) -> None:
        it = msg.refnum
        kind, d = msg.payload
        if kind == "recv" and self._unpacks_per_message:
            self.launch_unpack(ctx, d, self.block.cur, it)
        self.remaining -= 1
        if self.remaining:
            self.app.runtime.when(ctx, self.chare, HALO_ENTRY, it, self._on_halo)
        else:
            self._after_halos(ctx, it)

    @property
    def _unpacks_per_message(self) -> bool:
        return not self.graphs and self.fusion in (Fusion.NONE, Fusion.A)

    def _after_halos(self, ctx: ExecContext, it: int) -> None:
        block = self.block
        src, dst = block.cur, 1 - block.cur
        whole = bool(self.graphs) or self.fusion is Fusion.C
        if self.graphs:
            event = self.device.graph_launch(ctx, self.graphs[src], self.streams.compute, self.owner, it)
        elif self.fusion is Fusion.C:
            event = self.kernel(ctx, self.streams.compute, "fused", block.elements,
                                self.app.scenario.cost.kernel_rate, self._fused_effect(src, dst), it,
                                [self.streams.pack.tail], compute=True)
        else:
            if self.fusion is Fusion.B and block.neighbor_dirs:
                self.kernel(ctx, self.streams.pack, "unpack*", block.max_face_elements(),
                            self.app.scenario.cost.pack_rate, lambda: block.unpack_all(src), it)
            event = self.launch_update(ctx, src, dst, it, deps=[self.streams.pack.tail])
        self.mark_end(it, event)
        self.last_update = event
        nxt = it + 1

        if self.sync is SyncPolicy.BASELINE:
            self.device.synchronize(ctx, event, lambda c: self._after_sync(c, nxt, event, whole))
            return
        if nxt == self.app.total_iterations or whole:
            self._await(ctx, event, nxt)
        else:
            self._await(ctx, self.launch_packs(ctx, nxt, dst, [event]) or event, nxt)

    def _after_sync(self, ctx: ExecContext, nxt: int, event: DeviceEvent, whole: bool) -> None:
        self.block.swap()
        if nxt == self.app.total_iterations or whole:
            self._await(ctx, event, nxt)
        else:
            self._await(ctx, self.launch_packs(ctx, nxt, self.block.cur, [event]) or event, nxt)

    def _on_finish(self, ctx: ExecContext, msg: Message) -> None:
        if self.sync is SyncPolicy.OPTIMIZED:
            self.block.swap()
        self.app.finished += 1


class MpiRank(BlockWorker):
    def start(self, ctx: ExecContext) -> None:
        self._iterate(ctx, 0)

    def _iterate(self, ctx: ExecContext, it: int) -> None:
        if it == self.app.total_iterations:
            self.app.finished += 1
            return
        deps = [self.last_update] if self.last_update is not None else []
        last = self.launch_packs(ctx, it, self.block.cur, deps)
        self.device.synchronize(ctx, last, lambda c: self._exchange(c, it))

    def _exchange(self, ctx: ExecContext, it: int) -> None:
        sim = self.app.sim
        requests: List[Trigger] = []

        def request(kind: str, d: int) -> Trigger:
            trigger = Trigger(sim, f"{self.chare.name}.{kind}{DIRECTIONS[d]}[{it}]")
            requests.append(trigger)
            return trigger

        self.post_exchange(ctx, it, sends_first=False, done_for=request)
        interior = None
        if self.app.scenario.run.manual_overlap:
            interior = self.launch_update(ctx, self.block.cur, 1 - self.block.cur, it, part="interior")
        waitall = Trigger.all_of(sim, requests, f"{self.chare.name}.waitall[{it}]")
        self.app.runtime.block_on(ctx, waitall, lambda c: self._after_wait(c, it, interior is not None))

    def _after_wait(self, ctx: ExecContext, it: int, overlapped: bool) -> None:
        src, dst = self.block.cur, 1 - self.block.cur
        for d in self.block.neighbor_dirs:
            self.launch_unpack(ctx, d, src, it)
        part = "exterior" if overlapped else "full"
        event = self.launch_update(ctx, src, dst, it, part=part, deps=[self.streams.pack.tail])
        self.mark_end(it, event)
        self.last_update = event
        if self.sync is SyncPolicy.BASELINE:
            self.device.synchronize(ctx, event, lambda c: self._next(c, it))
        else:
            self._next(ctx, it)

    def _next(self, ctx: ExecContext, it: int) -> None:
        self.block.swap()
        self.app.runtime.defer(ctx, lambda c: self._iterate(c, it + 1), f"pe{ctx.pe.id}")


class JacobiSimulation:
    """One isolated simulation instance of a scenario."""

    def __init__(
        self,
        scenario: Scenario,
        log_fn: Optional[Callable[[str], None]] = None,
        record_trace: bool = False,
    ) -> None:
        validate_scenario(scenario)
        self.scenario = scenario
        self.log_fn = log_fn or (lambda _msg: None)
        machine, cost, run = scenario.machine, scenario.cost, scenario.run
        self.total_iterations = scenario.grid.total_iterations
        self.decomp = decompose(scenario.grid.dims, scenario.work_units)

        self.sim = Simulator(max_events=run.max_events, record_trace=record_trace)
        self.runtime = Runtime(self.sim, machine, cost.entry_cost, cost.msg_cost, log_fn=self.log_fn)
        self.network = Network(
            self.sim,
            machine,
            scenario.net,
            cost,
            scenario.resolve_device_mode(),
            notify=self.runtime.invoke_callback,
            msg_cost=cost.msg_cost,
            seed=run.seed,
            jitter=run.jitter,
            perturb=run.perturb,
        )
        self.runtime.network = self.network
        self.devices = [Device(self.sim, g, cost, machine.slots, self.runtime) for g in range(machine.total_gpus)]

        self._ends: Dict[int, List[int]] = defaultdict(list)
        self.finished = 0
        worker = MpiRank if run.mode.is_mpi else CharmWorker
        self.array = self.runtime.create_chare_array(
            "jacobi", self.decomp.parts, pes=machine.total_pes, factory=lambda chare: worker(self, chare)
        )
        self.workers: List[BlockWorker] = [c.state for c in self.array.elements.values()]
        self._link_neighbors()
        self.runtime.register_entry(self.array, START_ENTRY, lambda ctx, chare, _msg: chare.state.start(ctx))

    def device_for_pe(self, pe: int) -> Device:
        m = self.scenario.machine
        node, local = divmod(pe, m.pes_per_node)
        return self.devices[node * m.gpus_per_node + (local * m.gpus_per_node) // m.pes_per_node]

    def _link_neighbors(self) -> None:
        for worker in self.workers:
            for d in (1, 3, 5):
                other_index = worker.block.neighbors.get(d)
                if other_index is None:
                    continue
                other = self.array.elements[other_index].state
                channel = self.network.create_channel(
                    f"{worker.chare.name}{DIRECTIONS[d]}", worker.chare.pe, other.chare.pe
                )
                worker.links[d] = (channel, 0)
                other.links[opposite(d)] = (channel, 1)

    def record_end(self, it: int) -> None:
        self._ends[it].append(self.sim.now())

    def run(self) -> MetricsTable:
        self.runtime.broadcast(None, self.array, START_ENTRY)
        self.sim.run()
        count = len(self.workers)
        for it in range(self.total_iterations):
            if len(self._ends[it]) != count:
                raise SimulationError(
                    f"iteration {it} completed on {len(self._ends[it])} of {count} blocks; the run stalled"
                )
        if self.finished != count:
            raise SimulationError(f"only {self.finished} of {count} blocks finished all iterations")
        table = self.metrics()
        for line in self.runtime.leftover_messages():
            table.diagnostics.append(line)
            self.log_fn(f"leftover: {line}")
        return table

    def end_time(self, it: int) -> int:
        return 0 if it < 0 else max(self._ends[it])

    def final_grid(self) -> Optional[np.ndarray]:
        if not self.scenario.run.numerics:
            return None
        return assemble([w.block for w in self.workers], self.scenario.grid.dims)

    def metrics(self) -> MetricsTable:
        scenario_id = self.scenario.scenario_id
        warmup = self.scenario.grid.warmup
        pes = self.runtime.pes
        pe_busy = [merge_intervals(pe.busy_intervals) for pe in pes]
        devices = sorted({w.device.id: w.device for w in self.workers}.values(), key=lambda dev: dev.id)
        gpu_busy = [merge_intervals(dev.busy_intervals) for dev in devices]
        gpu_compute = [merge_intervals(dev.compute_intervals) for dev in devices]

        launch_log: Dict[Tuple[tuple, int], LaunchRecord] = {}
        launches_by_tag: Dict[int, int] = defaultdict(int)
        for dev in self.devices:
            for key, record in dev.launches.items():
                launch_log[key] = record
                launches_by_tag[key[1]] += record.kernels + record.graphs

        table = MetricsTable(trace_hash=self.sim.trace_hash, launch_log=launch_log)
        for it in range(warmup, self.total_iterations):
            lo, hi = self.end_time(it - 1), self.end_time(it)
            window = hi - lo
            if window > 0:
                pe_frac = sum(covered_within(m, lo, hi) for m in pe_busy) / (len(pes) * window)
                gpu_frac = sum(covered_within(m, lo, hi) for m in gpu_busy) / (len(devices) * window)
                exposed = sum(window - covered_within(m, lo, hi) for m in gpu_compute) / len(devices)
            else:
                pe_frac = gpu_frac = 0.0
                exposed = 0
            table.rows.append(
                MetricRow(
                    scenario=scenario_id,
                    iteration=it - warmup,
                    time_ps=window,
                    pe_busy=pe_frac,
                    gpu_busy=gpu_frac,
                    exposed_comm_ps=int(round(exposed)),
                    launches=launches_by_tag.get(it, 0),
                    nic_bytes=self.network.nic_bytes_by_tag.get(it, 0),
                )
            )
        return table


def simulate(
    scenario: Scenario, log_fn: Optional[Callable[[str], None]] = None, record_trace: bool = False
) -> Tuple[JacobiSimulation, MetricsTable]:
    app = JacobiSimulation(scenario, log_fn=log_fn, record_trace=record_trace)
    return app, app.run()


def run_charm(scenario: Scenario, log_fn: Optional[Callable[[str], None]] = None) -> MetricsTable:
    if scenario.run.mode.is_mpi:
        raise ConfigError(f"run_charm needs a Charm mode, got {scenario.run.mode.value}")
    return simulate(scenario, log_fn)[1]


def run_mpi(scenario: Scenario, log_fn: Optional[Callable[[str], None]] = None) -> MetricsTable:
    if not scenario.run.mode.is_mpi:
        raise ConfigError(f"run_mpi needs an MPI mode, got {scenario.run.mode.value}")
    return simulate(scenario, log_fn)[1]
