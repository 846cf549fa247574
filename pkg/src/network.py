"""Inter-PE communication: alpha-beta transfer plans for the three device paths,
pre-paired channels with FIFO send/recv matching, and a fluid fair-share model
of the per-node NIC.
"""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .engine import Simulator, Trigger
from .errors import ConfigError, SimulationError
from .models import CostModel, Location, Machine, NetMode, NetParams
from .runtime import Callback, ExecContext
from .utils import seconds_to_ps

# What a channel post notifies on completion
Completion = Union[Callback, Trigger, Callable[[], None], None]
Sink = Callable[[Any], None]

SRC_PCIE = "srcPCIe"
NIC = "NIC"
DST_PCIE = "dstPCIe"


@dataclass(frozen=True)
class Stage:
    resource: str
    bytes: int
    ps: int


@dataclass(frozen=True)
class TransferPlan:
    mode: NetMode
    size: int
    stages: Tuple[Stage, ...]
    chunked: bool
    chunks: int
    duration_ps: int
    # Source buffer reusable this long after the transfer starts
    sender_done_ps: int
    # NIC bandwidth term, replaced by the fluid drain under contention
    nic_ps: int
    # Part of the plan that precedes NIC injection
    pre_nic_ps: int

    @property
    def post_nic_ps(self) -> int:
        return max(0, self.duration_ps - self.pre_nic_ps - self.nic_ps)

    def bytes_on(self, resource: str) -> int:
        return sum(s.bytes for s in self.stages if s.resource == resource)


def _pcie_ps(nbytes: float, cost: CostModel) -> int:
    return seconds_to_ps(cost.pcie_lat) + seconds_to_ps(nbytes / cost.pcie_bw)


def _wire_ps(nbytes: float, net: NetParams) -> int:
    return seconds_to_ps(net.alpha) + seconds_to_ps(nbytes / net.beta)


def transfer_plan(size: int, mode: NetMode, net: NetParams, cost: CostModel) -> TransferPlan:
    """Costed stage decomposition of one message of `size` bytes."""
    if size < 0:
        raise ConfigError("transfer size must be >= 0")
    if net.beta <= 0 or net.chunk_size <= 0 or net.alpha < 0:
        raise ConfigError("network parameters need alpha >= 0, beta > 0 and chunk_size > 0")

    if mode is NetMode.PIPELINED and size <= net.pipeline_threshold:
        mode = NetMode.DEVICE_DIRECT

    if mode is NetMode.DEVICE_DIRECT:
        wire = _wire_ps(size, net)
        return TransferPlan(
            mode=mode,
            size=size,
            stages=(Stage(NIC, size, wire),),
            chunked=False,
            chunks=1,
            duration_ps=wire,
            sender_done_ps=wire,
            nic_ps=seconds_to_ps(size / net.beta),
            pre_nic_ps=0,
        )

    if mode is NetMode.HOST_STAGING:
        pcie = _pcie_ps(size, cost)
        wire = _wire_ps(size, net)
        return TransferPlan(
            mode=mode,
            size=size,
            stages=(Stage(SRC_PCIE, size, pcie), Stage(NIC, size, wire), Stage(DST_PCIE, size, pcie)),
            chunked=False,
            chunks=1,
            duration_ps=pcie + wire + pcie,
            sender_done_ps=pcie,
            nic_ps=seconds_to_ps(size / net.beta),
            pre_nic_ps=pcie,
        )

    n = math.ceil(size / net.chunk_size)
    chunk = size / n
    pcie = _pcie_ps(chunk, cost)
    wire = _wire_ps(chunk, net)
    stages: List[Stage] = []
    # Equal chunks; the last one absorbs the integer remainder of the byte split
    base, extra = divmod(size, n)
    for i in range(n):
        nbytes = base + (1 if i < extra else 0)
        stages.extend((Stage(SRC_PCIE, nbytes, pcie), Stage(NIC, nbytes, wire), Stage(DST_PCIE, nbytes, pcie)))
    duration = pcie + wire + pcie + (n - 1) * max(pcie, wire)
    return TransferPlan(
        mode=mode,
        size=size,
        stages=tuple(stages),
        chunked=True,
        chunks=n,
        duration_ps=duration,
        sender_done_ps=n * pcie,
        nic_ps=seconds_to_ps(size / net.beta),
        pre_nic_ps=pcie,
    )


def transfer_time(size: int, mode: NetMode, net: NetParams, cost: CostModel) -> int:
    return transfer_plan(size, mode, net, cost).duration_ps


def fair_share_finish_times(transfers: Sequence[Tuple[int, int]], beta: float) -> List[int]:
    """Offline fluid schedule of (start_ps, bytes) transfers sharing one NIC.

    Each active transfer drains at beta / active; returns the drain end of
    each transfer (network latency not included).
    """
    rate = beta / 1e12
    order = sorted(range(len(transfers)), key=lambda i: (transfers[i][0], i))
    remaining = {i: float(transfers[i][1]) for i in order}
    finish: Dict[int, int] = {}
    active: List[int] = []
    now = 0.0
    pending = deque(order)
    while pending or active:
        next_start = transfers[pending[0]][0] if pending else None
        if active:
            share = rate / len(active)
            soonest = min(active, key=lambda i: (remaining[i], i))
            done_at = now + remaining[soonest] / share
            if next_start is None or done_at <= next_start:
                for i in active:
                    remaining[i] -= (done_at - now) * share
                now = done_at
                finished = [i for i in active if remaining[i] <= 1e-6]
                for i in finished:
                    active.remove(i)
                    finish[i] = int(round(now))
                continue
            for i in active:
                remaining[i] -= (next_start - now) * share
        now = float(next_start)
        while pending and transfers[pending[0]][0] == next_start:
            i = pending.popleft()
            if remaining[i] <= 0:
                finish[i] = int(next_start)
            else:
                active.append(i)
    return [finish[i] for i in range(len(transfers))]


@dataclass
class _Flow:
    size: int
    remaining: float
    on_drained: Callable[[], None]
    handle: Optional[int] = None


class Nic:
    """Fluid fair-share NIC of one node."""

    def __init__(self, sim: Simulator, node: int, beta: float) -> None:
        self.sim = sim
        self.node = node
        self.rate_per_ps = beta / 1e12
        self.active: List[_Flow] = []
        self._last = 0
        self.bytes_drained = 0.0
        self.peak_active = 0

    def start(self, size: int, on_drained: Callable[[], None]) -> None:
        self._advance()
        self.active.append(_Flow(size, float(size), on_drained))
        self.peak_active = max(self.peak_active, len(self.active))
        self._reschedule()

    def _advance(self) -> None:
        now = self.sim.now()
        if self.active and now > self._last:
            share = self.rate_per_ps / len(self.active)
            for flow in self.active:
                moved = min(flow.remaining, (now - self._last) * share)
                flow.remaining -= moved
                self.bytes_drained += moved
        self._last = now

    def _reschedule(self) -> None:
        if not self.active:
            return
        share = self.rate_per_ps / len(self.active)
        for flow in self.active:
            if flow.handle is not None:
                self.sim.cancel(flow.handle)
            delay = max(0, int(round(flow.remaining / share)))
            flow.handle = self.sim.schedule(delay, lambda f=flow: self._finish(f), f"nic{self.node}")

    def _finish(self, flow: _Flow) -> None:
        self._advance()
        self.bytes_drained += flow.remaining
        flow.remaining = 0.0
        flow.handle = None
        self.active.remove(flow)
        self._reschedule()
        flow.on_drained()


@dataclass
class _Post:
    location: Location
    size: int
    done: Completion
    refnum: int
    payload: Any = None
    data: Any = None
    sink: Optional[Sink] = None


@dataclass
class Channel:
    """Pre-paired endpoints; side 0 and side 1 each send to the other."""

    name: str
    pes: Tuple[int, int]
    sends: Tuple[Deque[_Post], Deque[_Post]] = field(default_factory=lambda: (deque(), deque()))
    recvs: Tuple[Deque[_Post], Deque[_Post]] = field(default_factory=lambda: (deque(), deque()))
    matched: int = 0


class Network:
    def __init__(
        self,
        sim: Simulator,
        machine: Machine,
        net: NetParams,
        cost: CostModel,
        device_mode: NetMode,
        notify: Optional[Callable[[Callback, int, Any], None]] = None,
        msg_cost: float = 0.0,
        seed: int = 0,
        jitter: float = 0.0,
        perturb: bool = False,
    ) -> None:
        self.sim = sim
        self.machine = machine
        self.net = net
        self.cost = cost
        self.device_mode = device_mode
        self.notify = notify
        self.msg_cost_ps = seconds_to_ps(msg_cost)
        self.perturb = perturb
        self.jitter_ps = seconds_to_ps(jitter)
        self._rng = np.random.default_rng(seed)
        self.nics = [Nic(sim, node, net.beta) for node in range(machine.nodes)]
        self.nic_bytes_by_tag: Dict[int, int] = {}
        self.transfers = 0

    def node_of(self, pe: int) -> int:
        return pe // self.machine.pes_per_node

    def plan_for(self, size: int, location: Location) -> TransferPlan:
        mode = self.device_mode if location is Location.DEVICE else NetMode.DEVICE_DIRECT
        return transfer_plan(size, mode, self.net, self.cost)

    def _jitter(self) -> int:
        if not self.perturb or self.jitter_ps <= 0:
            return 0
        return int(self._rng.integers(0, self.jitter_ps + 1))

    def transfer(
        self,
        src_pe: int,
        dst_pe: int,
        size: int,
        location: Location,
        on_sent: Optional[Callable[[], None]],
        on_arrived: Callable[[], None],
        tag: int = -1,
    ) -> None:
        """Move one message starting now; callbacks fire at sender-done and arrival."""
        self.transfers += 1
        if src_pe == dst_pe:
            if on_sent is not None:
                on_sent()
            on_arrived()
            return

        plan = self.plan_for(size, location)
        src_node, dst_node = self.node_of(src_pe), self.node_of(dst_pe)
        entity = f"net{src_pe}->{dst_pe}"
        jitter = self._jitter()
        sent_early = plan.sender_done_ps < plan.duration_ps

        if src_node == dst_node or not self.net.contention:
            if src_node != dst_node:
                self._count_nic(tag, size)
            if on_sent is not None:
                self.sim.schedule(plan.sender_done_ps if sent_early else plan.duration_ps + jitter, on_sent, entity)
            self.sim.schedule(plan.duration_ps + jitter, on_arrived, entity)
            return

        self._count_nic(tag, size)
        start = self.sim.now()
        sender_fired = [False]

        def _sent() -> None:
            if not sender_fired[0] and on_sent is not None:
                sender_fired[0] = True
                on_sent()

        def _arrive() -> None:
            _sent()
            on_arrived()

        def _drained() -> None:
            self.sim.schedule(plan.post_nic_ps + jitter, _arrive, entity)

        if on_sent is not None and sent_early:
            self.sim.schedule_at(start + plan.sender_done_ps, _sent, entity)
        nic = self.nics[src_node]
        if plan.pre_nic_ps:
            self.sim.schedule(plan.pre_nic_ps, lambda: nic.start(size, _drained), entity)
        else:
            nic.start(size, _drained)

    def _count_nic(self, tag: int, size: int) -> None:
        self.nic_bytes_by_tag[tag] = self.nic_bytes_by_tag.get(tag, 0) + size

    # ---- channels ----
    def create_channel(self, name: str, pe_a: int, pe_b: int) -> Channel:
        return Channel(name=name, pes=(pe_a, pe_b))

    def channel_send(
        self,
        ctx: Optional[ExecContext],
        channel: Channel,
        side: int,
        location: Location,
        size: int,
        done: Completion,
        refnum: int = 0,
        payload: Any = None,
        data: Any = None,
    ) -> None:
        post = _Post(location, self._checked(size), done, refnum, payload, data=data)
        self._post(ctx, lambda: self._add_send(channel, side, post), channel)

    def channel_recv(
        self,
        ctx: Optional[ExecContext],
        channel: Channel,
        side: int,
        location: Location,
        size: int,
        done: Completion,
        refnum: int = 0,
        payload: Any = None,
        sink: Optional[Sink] = None,
    ) -> None:
        post = _Post(location, self._checked(size), done, refnum, payload, sink=sink)
        self._post(ctx, lambda: self._add_recv(channel, side, post), channel)

    @staticmethod
    def _checked(size: int) -> int:
        if size < 0:
            raise ConfigError("channel message size must be >= 0")
        return size

    def _post(self, ctx: Optional[ExecContext], action: Callable[[], None], channel: Channel) -> None:
        if ctx is None:
            action()
            return
        ctx.charge(self.msg_cost_ps)
        ctx.at_cursor(action, f"chan:{channel.name}")

    def _add_send(self, channel: Channel, side: int, post: _Post) -> None:
        waiting = channel.recvs[1 - side]
        if waiting:
            self._start(channel, side, post, waiting.popleft())
        else:
            channel.sends[side].append(post)

    def _add_recv(self, channel: Channel, side: int, post: _Post) -> None:
        waiting = channel.sends[1 - side]
        if waiting:
            self._start(channel, 1 - side, waiting.popleft(), post)
        else:
            channel.recvs[side].append(post)

    def _start(self, channel: Channel, src_side: int, send: _Post, recv: _Post) -> None:
        if send.size != recv.size:
            raise SimulationError(
                f"channel {channel.name}: send of {send.size} B matched a recv of {recv.size} B"
            )
        channel.matched += 1
        snapshot = send.data.copy() if send.data is not None else None

        def _arrived() -> None:
            if recv.sink is not None:
                recv.sink(snapshot)
            self._complete(recv)

        self.transfer(
            channel.pes[src_side],
            channel.pes[1 - src_side],
            send.size,
            send.location,
            on_sent=lambda: self._complete(send),
            on_arrived=_arrived,
            tag=send.refnum,
        )

    def _complete(self, post: _Post) -> None:
        done = post.done
        if done is None:
            return
        if isinstance(done, Callback):
            if self.notify is None:
                raise SimulationError("channel callback posted without a runtime")
            self.notify(done, post.refnum, post.payload)
        elif isinstance(done, Trigger):
            done.fire()
        else:
            done()
