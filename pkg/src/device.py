"""Simulated GPUs: prioritized FIFO streams, a slot-limited kernel pool, one
copy engine per direction, completion events with asynchronous host
callbacks, and prebuilt launch graphs.
"""

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx

from .engine import Simulator, Trigger
from .errors import ConfigError
from .models import CostModel, Index3, LaunchRecord
from .runtime import Callback, ExecContext, Runtime
from .utils import seconds_to_ps


class Priority(Enum):
    HIGH = 0
    LOW = 1


class OpKind(Enum):
    KERNEL = "kernel"
    COPY_D2H = "d2h"
    COPY_H2D = "h2d"


_POOL = {OpKind.KERNEL: "kernel", OpKind.COPY_D2H: "d2h", OpKind.COPY_H2D: "h2d"}

Effect = Optional[Callable[[], None]]


def kernel_duration_ps(cost: CostModel, work: int, rate: float) -> int:
    if rate <= 0:
        raise ConfigError("kernel rate must be > 0")
    return seconds_to_ps(cost.t_kernel_fixed) + seconds_to_ps(work / rate)


def copy_duration_ps(cost: CostModel, nbytes: int) -> int:
    return seconds_to_ps(cost.pcie_lat) + seconds_to_ps(nbytes / cost.pcie_bw)


class DeviceEvent(Trigger):
    pass


@dataclass
class DeviceOp:
    kind: OpKind
    work: int
    name: str = ""
    rate: float = 0.0
    effect: Effect = None
    # Update kernels count as compute for exposed-communication accounting
    compute: bool = False
    owner: Optional[Index3] = None
    tag: int = -1
    priority: Priority = Priority.LOW
    seq: int = 0
    start: Optional[int] = None
    end: Optional[int] = None
    event: Optional[DeviceEvent] = None
    waiting: int = 0


@dataclass
class Stream:
    id: int
    device: "Device"
    priority: Priority
    name: str = ""
    tail: Optional[DeviceEvent] = None


@dataclass(frozen=True)
class GraphNode:
    kind: OpKind
    work: int
    name: str
    rate: float = 0.0
    priority: Priority = Priority.HIGH
    deps: Tuple[int, ...] = ()
    effect: Effect = None
    compute: bool = False


@dataclass(frozen=True)
class DeviceGraph:
    nodes: Tuple[GraphNode, ...]
    variant: int
    order: Tuple[int, ...]


def graph_capture(nodes: Sequence[GraphNode], variant: int) -> DeviceGraph:
    dag = nx.DiGraph()
    dag.add_nodes_from(range(len(nodes)))
    for i, node in enumerate(nodes):
        for dep in node.deps:
            if not 0 <= dep < len(nodes):
                raise ConfigError(f"graph node '{node.name}' depends on unknown node {dep}")
            dag.add_edge(dep, i)
    if not nx.is_directed_acyclic_graph(dag):
        raise ConfigError(f"graph variant {variant} has a dependency cycle")
    order = tuple(nx.lexicographical_topological_sort(dag))
    return DeviceGraph(nodes=tuple(nodes), variant=variant, order=order)


@dataclass
class _ReadyOp:
    key: Tuple[int, int]
    op: DeviceOp = field(compare=False)

    def __lt__(self, other: "_ReadyOp") -> bool:
        return self.key < other.key


class Device:
    def __init__(
        self,
        sim: Simulator,
        id: int,
        cost: CostModel,
        slots: int,
        runtime: Optional[Runtime] = None,
    ) -> None:
        if slots < 1:
            raise ConfigError("a device needs at least one kernel slot")
        self.sim = sim
        self.id = id
        self.cost = cost
        self.slots = slots
        self.runtime = runtime
        self.streams: List[Stream] = []
        self._free: Dict[str, int] = {"kernel": slots, "d2h": 1, "h2d": 1}
        self._ready: List[_ReadyOp] = []
        self._seq = 0
        self._dispatch_pending = False
        self.peak_slots_in_use = 0
        self.busy_intervals: List[Tuple[int, int]] = []
        self.compute_intervals: List[Tuple[int, int]] = []
        self.launches: Dict[Tuple[Index3, int], LaunchRecord] = {}
        self.t_launch_ps = seconds_to_ps(cost.t_launch)
        self.t_graph_launch_ps = seconds_to_ps(cost.t_graph_launch)

    @property
    def entity(self) -> str:
        return f"gpu{self.id}"

    def create_stream(self, priority: Priority, name: str = "") -> Stream:
        stream = Stream(id=len(self.streams), device=self, priority=priority, name=name)
        self.streams.append(stream)
        return stream

    def _check_stream(self, stream: Stream) -> None:
        if stream.device is not self or stream.id >= len(self.streams) or self.streams[stream.id] is not stream:
            raise ConfigError(f"stream '{stream.name}' does not exist on {self.entity}")

    def _launch_record(self, owner: Optional[Index3], tag: int) -> Optional[LaunchRecord]:
        if owner is None:
            return None
        return self.launches.setdefault((owner, tag), LaunchRecord())

    # ---- individual launches ----
    def enqueue(
        self,
        ctx: Optional[ExecContext],
        stream: Stream,
        op: DeviceOp,
        deps: Sequence[Optional[DeviceEvent]] = (),
    ) -> DeviceEvent:
        """Launch op behind the stream tail and any cross-stream deps."""
        self._check_stream(stream)
        if op.work < 0:
            raise ConfigError(f"op '{op.name}' has negative work")
        op.priority = stream.priority
        op.event = DeviceEvent(self.sim, f"{self.entity}:{op.name}")
        waits = [d for d in [stream.tail, *deps] if d is not None]
        stream.tail = op.event
        if op.kind is OpKind.KERNEL:
            record = self._launch_record(op.owner, op.tag)
            if record is not None:
                record.kernels += 1
        if ctx is None:
            self._submit(op, waits)
        else:
            ctx.charge(self.t_launch_ps)
            ctx.at_cursor(lambda: self._submit(op, waits), self.entity)
        return op.event

    def _submit(self, op: DeviceOp, waits: Sequence[DeviceEvent]) -> None:
        pending = [d for d in waits if not d.fired]
        op.waiting = len(pending)
        if not pending:
            self._make_ready(op)
            return
        for dep in pending:
            dep.add_waiter(lambda _e, o=op: self._dep_done(o))

    def _dep_done(self, op: DeviceOp) -> None:
        op.waiting -= 1
        if op.waiting == 0:
            self._make_ready(op)

    def _make_ready(self, op: DeviceOp) -> None:
        op.seq = self._seq
        self._seq += 1
        heapq.heappush(self._ready, _ReadyOp((op.priority.value, op.seq), op))
        self._request_dispatch()

    def _request_dispatch(self) -> None:
        if self._dispatch_pending:
            return
        self._dispatch_pending = True
        self.sim.schedule(0, self._dispatch, self.entity)

    def _dispatch(self) -> None:
        """Start ready ops in (priority, readiness) order; a blocked pool admits no later op."""
        self._dispatch_pending = False
        blocked = set()
        deferred: List[_ReadyOp] = []
        while self._ready:
            item = heapq.heappop(self._ready)
            op = item.op
            pool = _POOL[op.kind]
            if pool in blocked or not self._free[pool]:
                blocked.add(pool)
                deferred.append(item)
                continue
            self._start(op, pool)
        for item in deferred:
            heapq.heappush(self._ready, item)

    def _start(self, op: DeviceOp, pool: str) -> None:
        self._free[pool] -= 1
        op.start = self.sim.now()
        if op.kind is OpKind.KERNEL:
            duration = kernel_duration_ps(self.cost, op.work, op.rate)
            self.peak_slots_in_use = max(self.peak_slots_in_use, self.slots - self._free["kernel"])
        else:
            duration = copy_duration_ps(self.cost, op.work)
        self.sim.schedule(duration, lambda: self._complete(op, pool), self.entity)

    def _complete(self, op: DeviceOp, pool: str) -> None:
        op.end = self.sim.now()
        self._free[pool] += 1
        self.busy_intervals.append((op.start, op.end))
        if op.compute:
            self.compute_intervals.append((op.start, op.end))
        if op.effect is not None:
            op.effect()
        op.event.fire()
        if self._ready:
            self._request_dispatch()

    # ---- host-side completion ----
    def on_complete(self, event: DeviceEvent, callback: Callback, refnum: int = 0, payload: Any = None) -> None:
        """Deliver callback to its owner PE when event fires; never blocks the host."""
        if self.runtime is None:
            raise ConfigError(f"{self.entity} has no runtime to deliver callbacks to")
        event.add_waiter(lambda _e: self.runtime.invoke_callback(callback, refnum, payload))

    def synchronize(
        self,
        ctx: ExecContext,
        target: Union[Stream, DeviceEvent, None],
        continuation: Callable[[ExecContext], None],
    ) -> None:
        """Hold the calling PE until the stream drains or the event fires."""
        if self.runtime is None:
            raise ConfigError(f"{self.entity} has no runtime to block")
        if isinstance(target, Stream):
            self._check_stream(target)
            target = target.tail
        self.runtime.block_on(ctx, target, continuation)

    # ---- graphs ----
    def graph_launch(
        self,
        ctx: Optional[ExecContext],
        graph: DeviceGraph,
        stream: Stream,
        owner: Optional[Index3] = None,
        tag: int = -1,
    ) -> DeviceEvent:
        """One host launch for the whole DAG; root nodes wait on the stream tail."""
        self._check_stream(stream)
        prior = stream.tail
        events: Dict[int, DeviceEvent] = {}
        launches: List[Tuple[DeviceOp, List[DeviceEvent]]] = []
        for i in graph.order:
            node = graph.nodes[i]
            op = DeviceOp(
                kind=node.kind,
                work=node.work,
                name=f"g{graph.variant}:{node.name}",
                rate=node.rate,
                effect=node.effect,
                compute=node.compute,
                owner=owner,
                tag=tag,
                priority=node.priority,
            )
            op.event = DeviceEvent(self.sim, f"{self.entity}:{op.name}")
            events[i] = op.event
            waits = [events[d] for d in node.deps]
            if not node.deps and prior is not None:
                waits.append(prior)
            launches.append((op, waits))
        join = DeviceEvent.all_of(self.sim, [events[i] for i in graph.order], f"{self.entity}:graph{graph.variant}")
        stream.tail = join
        record = self._launch_record(owner, tag)
        if record is not None:
            record.graphs += 1
            record.variants.append(graph.variant)

        def _submit_all() -> None:
            for op, waits in launches:
                self._submit(op, waits)

        if ctx is None:
            _submit_all()
        else:
            ctx.charge(self.t_graph_launch_ps)
            ctx.at_cursor(_submit_all, self.entity)
        return join
