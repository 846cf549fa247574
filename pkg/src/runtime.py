"""Message-driven tasking layer: PEs with schedulers, chare arrays with block
mapping, asynchronous entry-method messages, reference-numbered `when`
matching and callbacks.

Entry methods run eagerly in Python at the virtual instant the scheduler
picks their message, but their host cost is accounted on an ExecContext
cursor: every side effect they issue (messages, device launches, channel
posts) takes effect at the cursor time reached when it was issued, and the
PE stays occupied until the final cursor.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, Iterator, List, Optional, Tuple

from .engine import Simulator, Trigger
from .errors import ConfigError, SimulationError
from .models import Dims3, Index3, Location, Machine
from .utils import seconds_to_ps

CALLBACK_ENTRY = "__callback__"

Handler = Callable[["ExecContext", "Chare", "Message"], None]
Continuation = Callable[["ExecContext", "Message"], None]


@dataclass
class Message:
    array: str
    index: Index3
    entry: str
    refnum: int = 0
    payload: Any = None
    size: int = 0
    send_time: int = 0
    callback: Optional["Callback"] = None


@dataclass
class WhenSlot:
    entry: str
    refnum: int
    continuation: Continuation


@dataclass
class Callback:
    id: int
    chare: "Chare"
    continuation: Optional[Continuation] = None
    entry: Optional[str] = None
    uses: Optional[int] = None
    invoked: int = 0


@dataclass
class PE:
    id: int
    node: int
    queue: Deque[Message] = field(default_factory=deque)
    busy: bool = False
    busy_until: int = 0
    step_pending: bool = False
    busy_intervals: List[Tuple[int, int]] = field(default_factory=list)


class Chare:
    def __init__(self, array: "ChareArray", index: Index3, pe: int) -> None:
        self.array = array
        self.index = index
        self.pe = pe
        self.state: Any = None
        self.pending_whens: Dict[Tuple[str, int], WhenSlot] = {}
        self.buffered: Dict[Tuple[str, int], Deque[Message]] = {}

    @property
    def name(self) -> str:
        x, y, z = self.index
        return f"{self.array.name}[{x},{y},{z}]"

    def buffered_count(self) -> int:
        return sum(len(q) for q in self.buffered.values())


def block_mapping(total: int, pes: int) -> List[int]:
    """Home PE of each linearized index: contiguous blocks, larger blocks first."""
    base, extra = divmod(total, pes)
    mapping: List[int] = []
    for pe in range(pes):
        mapping.extend([pe] * (base + (1 if pe < extra else 0)))
    return mapping


class ChareArray:
    def __init__(self, name: str, dims: Dims3, pes: int) -> None:
        if any(d < 1 for d in dims):
            raise ConfigError(f"chare array '{name}' has a zero extent: {dims}")
        if pes < 1:
            raise ConfigError(f"chare array '{name}' needs at least one PE")
        self.name = name
        self.dims = dims
        self.handlers: Dict[str, Handler] = {}
        homes = block_mapping(self.total, pes)
        self.mapping: Dict[Index3, int] = {}
        self.elements: Dict[Index3, Chare] = {}
        for linear, index in enumerate(self.indices()):
            self.mapping[index] = homes[linear]
            self.elements[index] = Chare(self, index, homes[linear])

    @property
    def total(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def indices(self) -> Iterator[Index3]:
        dx, dy, dz = self.dims
        for x in range(dx):
            for y in range(dy):
                for z in range(dz):
                    yield (x, y, z)

    def linear(self, index: Index3) -> int:
        x, y, z = index
        return (x * self.dims[1] + y) * self.dims[2] + z

    def contains(self, index: Index3) -> bool:
        return all(0 <= i < d for i, d in zip(index, self.dims))

    def __getitem__(self, index: Index3) -> Chare:
        if not self.contains(index):
            raise ConfigError(f"index {index} outside chare array '{self.name}' of extent {self.dims}")
        return self.elements[index]

    def pe_loads(self) -> Dict[int, int]:
        loads: Dict[int, int] = {}
        for pe in self.mapping.values():
            loads[pe] = loads.get(pe, 0) + 1
        return loads


class ExecContext:
    """Host-side cursor of one entry-method execution on a PE."""

    def __init__(self, runtime: "Runtime", pe: PE, start: int) -> None:
        self.runtime = runtime
        self.pe = pe
        self.start = start
        self.cursor = start
        self.blocked = False

    def charge(self, ps: int) -> None:
        self.cursor += ps

    def at_cursor(self, action: Callable[[], None], entity: str) -> None:
        self.runtime.sim.schedule_at(self.cursor, action, entity)


class Runtime:
    def __init__(
        self,
        sim: Simulator,
        machine: Machine,
        entry_cost: float,
        msg_cost: float,
        log_fn: Optional[Callable[[str], None]] = None,
    ) -> None:
        self.sim = sim
        self.machine = machine
        self.entry_cost_ps = seconds_to_ps(entry_cost)
        self.msg_cost_ps = seconds_to_ps(msg_cost)
        self.log_fn = log_fn or (lambda _msg: None)
        self.pes = [PE(id=p, node=p // machine.pes_per_node) for p in range(machine.total_pes)]
        self.arrays: Dict[str, ChareArray] = {}
        self.network: Any = None
        self._callbacks: Dict[int, Callback] = {}
        self.messages_sent = 0
        self.messages_consumed = 0

    # ---- arrays ----
    def create_chare_array(
        self,
        name: str,
        dims: Dims3,
        pes: Optional[int] = None,
        factory: Optional[Callable[[Chare], Any]] = None,
    ) -> ChareArray:
        pes = len(self.pes) if pes is None else pes
        if pes > len(self.pes):
            raise ConfigError(f"chare array '{name}' wants {pes} PEs, machine has {len(self.pes)}")
        array = ChareArray(name, dims, pes)
        self.arrays[name] = array
        if factory is not None:
            for chare in array.elements.values():
                chare.state = factory(chare)
        return array

    def register_entry(self, array: ChareArray, entry: str, handler: Handler) -> None:
        array.handlers[entry] = handler

    # ---- messaging ----
    def invoke(
        self,
        ctx: Optional[ExecContext],
        array: ChareArray,
        index: Optional[Index3],
        entry: str,
        refnum: int = 0,
        payload: Any = None,
        size: int = 0,
        location: Location = Location.HOST,
    ) -> None:
        """Asynchronous entry-method invocation; index None broadcasts."""
        if size < 0:
            raise ConfigError("message size must be >= 0")
        targets = list(array.indices()) if index is None else [index]
        for target in targets:
            chare = array[target]
            if ctx is None:
                msg = Message(array.name, target, entry, refnum, payload, size, self.sim.now())
                self.messages_sent += 1
                self._enqueue(self.pes[chare.pe], msg)
                continue
            ctx.charge(self.msg_cost_ps)
            ctx.at_cursor(
                lambda c=chare, t=target, src=ctx.pe.id: self._send(src, c, t, entry, refnum, payload, size, location),
                f"pe{ctx.pe.id}.send",
            )

    def _send(
        self, src_pe: int, chare: Chare, index: Index3, entry: str, refnum: int, payload: Any, size: int, location: Location
    ) -> None:
        msg = Message(chare.array.name, index, entry, refnum, payload, size, self.sim.now())
        self.messages_sent += 1
        dst = self.pes[chare.pe]
        if src_pe == dst.id or self.network is None:
            self._enqueue(dst, msg)
            return
        self.network.transfer(
            src_pe, dst.id, size, location, on_sent=None, on_arrived=lambda: self._enqueue(dst, msg), tag=refnum
        )

    def broadcast(self, ctx: Optional[ExecContext], array: ChareArray, entry: str, refnum: int = 0, payload: Any = None) -> None:
        self.invoke(ctx, array, None, entry, refnum, payload)

    def _enqueue(self, pe: PE, msg: Message) -> None:
        pe.queue.append(msg)
        self._kick(pe)

    def _kick(self, pe: PE) -> None:
        if pe.busy or pe.step_pending or not pe.queue:
            return
        pe.step_pending = True
        self.sim.schedule(0, lambda: self.scheduler_step(pe), f"pe{pe.id}")

    # ---- scheduling ----
    def scheduler_step(self, pe: PE) -> None:
        pe.step_pending = False
        if pe.busy or not pe.queue:
            return
        msg = pe.queue.popleft()
        array = self.arrays.get(msg.array)
        if array is None or not array.contains(msg.index):
            raise SimulationError(f"message for nonexistent chare {msg.array}{msg.index} entry '{msg.entry}'")
        chare = array.elements[msg.index]

        run: Optional[Callable[[ExecContext], None]] = None
        if msg.callback is not None and msg.callback.continuation is not None:
            cont = msg.callback.continuation
            run = lambda ctx: cont(ctx, msg)  # noqa: E731
        else:
            key = (msg.entry, msg.refnum)
            slot = chare.pending_whens.pop(key, None)
            if slot is not None:
                run = lambda ctx: slot.continuation(ctx, msg)  # noqa: E731
            elif msg.entry in array.handlers:
                handler = array.handlers[msg.entry]
                run = lambda ctx: handler(ctx, chare, msg)  # noqa: E731

        if run is None:
            chare.buffered.setdefault((msg.entry, msg.refnum), deque()).append(msg)
            self._kick(pe)
            return

        self.messages_consumed += 1
        ctx = ExecContext(self, pe, self.sim.now())
        pe.busy = True
        ctx.charge(self.entry_cost_ps)
        run(ctx)
        self._finish(ctx)

    def _finish(self, ctx: ExecContext) -> None:
        if ctx.blocked:
            return
        pe = ctx.pe
        end = ctx.cursor
        pe.busy_intervals.append((ctx.start, end))
        pe.busy_until = max(pe.busy_until, end)
        self.sim.schedule_at(end, lambda: self._release(pe), f"pe{pe.id}")

    def _release(self, pe: PE) -> None:
        pe.busy = False
        self._kick(pe)

    def block_on(self, ctx: ExecContext, trigger: Optional[Trigger], continuation: Callable[[ExecContext], None]) -> None:
        """Hold the PE until trigger fires, then continue on the same context."""
        if trigger is None or trigger.fired:
            if trigger is not None and trigger.fire_time is not None:
                ctx.cursor = max(ctx.cursor, trigger.fire_time)
            continuation(ctx)
            return
        ctx.blocked = True

        def _resume(_: Trigger) -> None:
            ctx.blocked = False
            ctx.cursor = max(ctx.cursor, self.sim.now())
            continuation(ctx)
            self._finish(ctx)

        trigger.add_waiter(_resume)

    def defer(self, ctx: ExecContext, continuation: Callable[[ExecContext], None], entity: str) -> None:
        """Continue at the current cursor from a fresh event, keeping the PE held."""
        ctx.blocked = True

        def _resume() -> None:
            ctx.blocked = False
            continuation(ctx)
            self._finish(ctx)

        ctx.at_cursor(_resume, entity)

    # ---- SDAG-style matching ----
    def when(self, ctx: ExecContext, chare: Chare, entry: str, refnum: int, continuation: Continuation) -> None:
        key = (entry, refnum)
        if key in chare.pending_whens:
            raise SimulationError(f"{chare.name} already waits on entry '{entry}' refnum {refnum}")
        waiting = chare.buffered.get(key)
        if waiting:
            msg = waiting.popleft()
            if not waiting:
                del chare.buffered[key]
            self.messages_consumed += 1
            continuation(ctx, msg)
            return
        chare.pending_whens[key] = WhenSlot(entry, refnum, continuation)

    # ---- callbacks ----
    def register_callback(
        self,
        chare: Chare,
        continuation: Optional[Continuation] = None,
        entry: Optional[str] = None,
        uses: Optional[int] = None,
    ) -> Callback:
        if chare.array.name not in self.arrays:
            raise ConfigError(f"callback target {chare.name} does not exist")
        if (continuation is None) == (entry is None):
            raise ConfigError("a callback needs exactly one of continuation or entry")
        cb = Callback(id=len(self._callbacks), chare=chare, continuation=continuation, entry=entry, uses=uses)
        self._callbacks[cb.id] = cb
        return cb

    def invoke_callback(self, cb: Callback, refnum: int = 0, payload: Any = None) -> None:
        registered = self._callbacks.get(cb.id)
        if registered is not cb:
            raise SimulationError(f"callback {cb.id} was never registered")
        if cb.uses is not None and cb.invoked >= cb.uses:
            raise SimulationError(f"callback {cb.id} invoked more than {cb.uses} times")
        cb.invoked += 1
        chare = cb.chare
        msg = Message(
            chare.array.name,
            chare.index,
            cb.entry or CALLBACK_ENTRY,
            refnum,
            payload,
            0,
            self.sim.now(),
            callback=cb,
        )
        self.messages_sent += 1
        self._enqueue(self.pes[chare.pe], msg)

    # ---- diagnostics ----
    def leftover_messages(self) -> List[str]:
        report: List[str] = []
        for array in self.arrays.values():
            for chare in array.elements.values():
                for (entry, refnum), queue in chare.buffered.items():
                    report.append(f"{chare.name}: {len(queue)} buffered message(s) for '{entry}' refnum {refnum}")
        for pe in self.pes:
            if pe.queue:
                report.append(f"pe{pe.id}: {len(pe.queue)} unprocessed message(s)")
        return report
