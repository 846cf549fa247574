"""Deterministic discrete-event core.

Virtual time is an integer number of picoseconds. Events fire in
lexicographic (time, seq) order, where seq is assigned at scheduling time,
so simultaneous events fire in the order they were scheduled.
"""

import hashlib
import heapq
import struct
from collections import Counter, deque
from typing import Callable, Deque, Iterable, List, Optional, Set, Tuple

from .config import DEFAULT_MAX_EVENTS, LIVELOCK_WINDOW
from .errors import ConfigError, LivelockError, SimulationError

VirtualTime = int
Action = Callable[[], None]
TraceEntry = Tuple[int, int, str]


class Simulator:
    def __init__(self, max_events: int = DEFAULT_MAX_EVENTS, record_trace: bool = False) -> None:
        if max_events < 1:
            raise ConfigError("max_events must be >= 1")
        self.max_events = max_events
        self._now: VirtualTime = 0
        self._seq = 0
        self._queue: List[Tuple[int, int, str, Action]] = []
        self._cancelled: Set[int] = set()
        self._live: Set[int] = set()
        self._recent: Deque[str] = deque(maxlen=LIVELOCK_WINDOW)
        self._hash = hashlib.blake2b(digest_size=8)
        self.scheduled = 0
        self.fired = 0
        self.cancelled = 0
        self.trace: Optional[List[TraceEntry]] = [] if record_trace else None

    def now(self) -> VirtualTime:
        return self._now

    def schedule(self, delay: VirtualTime, action: Action, entity: str = "") -> int:
        """Enqueue action at now + delay; returns a handle for cancel()."""
        if delay < 0:
            raise ConfigError(f"negative delay {delay} ps scheduled by '{entity}'")
        return self._push(self._now + delay, action, entity)

    def schedule_at(self, time: VirtualTime, action: Action, entity: str = "") -> int:
        if time < self._now:
            raise ConfigError(f"'{entity}' scheduled at {time} ps, before now ({self._now} ps)")
        return self._push(time, action, entity)

    def _push(self, time: VirtualTime, action: Action, entity: str) -> int:
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, (time, seq, entity, action))
        self._live.add(seq)
        self.scheduled += 1
        return seq

    def cancel(self, handle: int) -> bool:
        if handle not in self._live:
            return False
        self._live.discard(handle)
        self._cancelled.add(handle)
        self.cancelled += 1
        return True

    @property
    def pending(self) -> int:
        return len(self._live)

    def run(self) -> VirtualTime:
        """Drain the queue; returns the final clock value."""
        while self._queue:
            time, seq, entity, action = heapq.heappop(self._queue)
            self._live.discard(seq)
            if seq in self._cancelled:
                self._cancelled.discard(seq)
                continue
            if self.fired >= self.max_events:
                raise LivelockError(self._livelock_message(), self._busiest_entity())
            self._now = time
            self.fired += 1
            self._recent.append(entity)
            self._hash.update(struct.pack("<qq", time, seq))
            self._hash.update(entity.encode("utf-8"))
            if self.trace is not None:
                self.trace.append((time, seq, entity))
            action()
        return self._now

    def _busiest_entity(self) -> str:
        if not self._recent:
            return ""
        return Counter(self._recent).most_common(1)[0][0]

    def _livelock_message(self) -> str:
        entity = self._busiest_entity()
        return (
            f"event watchdog tripped after {self.fired} events at t={self._now} ps; "
            f"most recent events were scheduled by '{entity}'"
        )

    @property
    def trace_hash(self) -> str:
        return self._hash.copy().hexdigest()


class Trigger:
    """A one-shot completion signal with waiters.

    Waiters added after the trigger has fired run immediately.
    """

    def __init__(self, sim: Simulator, name: str = "") -> None:
        self.sim = sim
        self.name = name
        self.fired = False
        self.fire_time: Optional[VirtualTime] = None
        self._waiters: List[Callable[["Trigger"], None]] = []

    def fire(self) -> None:
        if self.fired:
            raise SimulationError(f"trigger '{self.name}' fired twice")
        self.fired = True
        self.fire_time = self.sim.now()
        waiters, self._waiters = self._waiters, []
        for waiter in waiters:
            waiter(self)

    def add_waiter(self, waiter: Callable[["Trigger"], None]) -> None:
        if self.fired:
            waiter(self)
        else:
            self._waiters.append(waiter)

    @classmethod
    def all_of(cls, sim: Simulator, triggers: Iterable["Trigger"], name: str = "") -> "Trigger":
        joined = cls(sim, name)
        pending = [t for t in triggers if not t.fired]
        remaining = [len(pending)]
        if not pending:
            joined.fire()
            return joined

        def _one_done(_: "Trigger") -> None:
            remaining[0] -= 1
            if remaining[0] == 0:
                joined.fire()

        for trigger in pending:
            trigger.add_waiter(_one_done)
        return joined
