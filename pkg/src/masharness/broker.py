"""In-process topic exchange with wildcard bindings and bounded FIFO queues.

A single broker lock makes publish linearizable: each published event is
matched against every queue's bindings and enqueued (at most once per queue)
before the next publish is admitted.  Consumers block on per-queue
conditions, so slow consumers never stall publishers; a full queue drops its
oldest event instead.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass

from .logmodel import (
    EventClock,
    BindingPattern,
    InvalidPattern,
    LogEvent,
    RoutingKey,
    make_log_event,
    parse_binding_pattern,
    routing_key,
    serialize_event,
)

DEFAULT_CAPACITY = 65536

STAR = "*"
HASH = "#"


class BrokerError(Exception):
    """Base class for broker usage errors."""


class DuplicateQueue(BrokerError):
    """A queue with the same name already exists."""


class QueueClosed(BrokerError):
    """The broker is closed and the queue is fully drained."""


def _match(pattern: tuple[str, ...], key: tuple[str, ...]) -> bool:
    """Glob-style segment matcher: * is one word, # is any run of words.

    Two-pointer walk with backtracking to the most recent #, the classic
    linear-space wildcard algorithm, so pathological patterns stay cheap.
    """
    p = k = 0
    star_p = -1  # position after the last # seen
    star_k = 0  # key position that # is currently absorbing up to
    np, nk = len(pattern), len(key)
    while k < nk:
        if p < np and (pattern[p] == STAR or pattern[p] == key[k]):
            p += 1
            k += 1
        elif p < np and pattern[p] == HASH:
            star_p = p + 1
            star_k = k
            p += 1
        elif star_p != -1:
            # let the previous # absorb one more word and retry
            star_k += 1
            p = star_p
            k = star_k
        else:
            return False
    while p < np and pattern[p] == HASH:
        p += 1
    return p == np


def matches(pattern: BindingPattern | str, key: RoutingKey | LogEvent | str) -> bool:
    """Decide whether a binding pattern matches a routing key."""
    if isinstance(pattern, str):
        pattern = parse_binding_pattern(pattern)
    if isinstance(key, LogEvent):
        key = routing_key(key)
    if isinstance(key, str):
        key = RoutingKey(tuple(key.split(".")))
    return _match(pattern.segments, key.segments)


@dataclass(frozen=True, slots=True)
class PublishReceipt:
    """Outcome of one publish: global sequence number and match count."""

    sequence: int
    matched: int


@dataclass(frozen=True, slots=True)
class QueueStats:
    matched: int
    delivered: int
    dropped: int
    buffered: int


@dataclass(frozen=True, slots=True)
class BrokerStats:
    published: int
    queues: dict[str, QueueStats]


class QueueHandle:
    """Consumer-side view of one declared queue."""

    def __init__(self, broker: "Broker", name: str, bindings: tuple[BindingPattern, ...]):
        self._broker = broker
        self.name = name
        self.bindings = bindings

    def consume(self, maxWait: float | None = None) -> LogEvent | None:
        return self._broker.consume(self, maxWait)

    def __repr__(self) -> str:
        pats = ", ".join(b.encode() for b in self.bindings)
        return f"QueueHandle({self.name!r}, [{pats}])"


class _Queue:
    __slots__ = ("name", "bindings", "buffer", "capacity", "cond",
                 "matched", "delivered", "dropped")

    def __init__(self, name, bindings, capacity, lock):
        self.name = name
        self.bindings = bindings
        self.buffer: deque[LogEvent] = deque()
        self.capacity = capacity
        self.cond = threading.Condition(lock)
        self.matched = 0
        self.delivered = 0
        self.dropped = 0


class Broker:
    """Topic exchange for LogEvents.

    ``tap`` names a file that mirrors every published event (one serialized
    line each, including events that matched no queue).  The file is created
    fresh and only appended to afterwards.
    """

    def __init__(self, clock: EventClock | None = None, tap: str | None = None,
                 default_capacity: int = DEFAULT_CAPACITY):
        self.clock = clock if clock is not None else EventClock()
        self._lock = threading.Lock()
        self._queues: dict[str, _Queue] = {}
        self._published = 0
        self._closed = False
        self._default_capacity = default_capacity
        self._tap = open(tap, "w", encoding="utf-8") if tap else None

    def declare_queue(self, name: str, patterns, capacity: int | None = None) -> QueueHandle:
        """Create a named queue bound to one or more patterns.

        Raises DuplicateQueue on a name collision and InvalidPattern if the
        binding list is empty or contains a malformed pattern.
        """
        parsed = tuple(
            p if isinstance(p, BindingPattern) else parse_binding_pattern(p)
            for p in patterns
        )
        if not parsed:
            raise InvalidPattern("queue needs at least one binding pattern")
        if capacity is None:
            capacity = self._default_capacity
        if capacity < 1:
            raise BrokerError(f"capacity must be positive, got {capacity}")
        with self._lock:
            if self._closed:
                raise QueueClosed("broker is closed")
            if name in self._queues:
                raise DuplicateQueue(f"queue {name!r} already declared")
            self._queues[name] = _Queue(name, parsed, capacity, self._lock)
        return QueueHandle(self, name, parsed)

    def publish(self, event: LogEvent) -> PublishReceipt:
        """Route one event to every queue with a matching binding.

        An event is enqueued at most once per queue even if several of the
        queue's bindings match.  Zero matches is legal; the receipt reports
        the count.  A full queue drops its oldest buffered event first.
        """
        key = routing_key(event).segments
        with self._lock:
            if self._closed:
                raise QueueClosed("broker is closed")
            seq = self._published
            self._published += 1
            matched = 0
            for q in self._queues.values():
                if any(_match(b.segments, key) for b in q.bindings):
                    q.matched += 1
                    matched += 1
                    if len(q.buffer) >= q.capacity:
                        q.buffer.popleft()
                        q.dropped += 1
                    q.buffer.append(event)
                    q.cond.notify()
            if self._tap is not None:
                self._tap.write(serialize_event(event) + "\n")
        return PublishReceipt(sequence=seq, matched=matched)

    def consume(self, handle: QueueHandle, maxWait: float | None = None) -> LogEvent | None:
        """Pop the next event in FIFO order.

        Blocks up to ``maxWait`` seconds (forever when None) and returns
        None on timeout.  Raises QueueClosed once the broker is closed and
        the queue has been drained; buffered events remain consumable after
        close.
        """
        q = self._queues[handle.name]
        with q.cond:
            if maxWait is None:
                while not q.buffer and not self._closed:
                    q.cond.wait()
            else:
                deadline = time.monotonic() + maxWait
                while not q.buffer and not self._closed:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        return None
                    q.cond.wait(remaining)
            if q.buffer:
                q.delivered += 1
                return q.buffer.popleft()
            raise QueueClosed(f"queue {handle.name!r} is closed and drained")

    def close(self) -> None:
        """Stop accepting publishes and wake all blocked consumers."""
        with self._lock:
            if self._closed:
                return
            self._closed = True
            for q in self._queues.values():
                q.cond.notify_all()
            if self._tap is not None:
                self._tap.close()
                self._tap = None

    @property
    def closed(self) -> bool:
        with self._lock:
            return self._closed

    def stats(self) -> BrokerStats:
        """Consistent snapshot of broker counters.

        For every queue, matched == delivered + dropped + buffered.
        """
        with self._lock:
            queues = {
                q.name: QueueStats(
                    matched=q.matched,
                    delivered=q.delivered,
                    dropped=q.dropped,
                    buffered=len(q.buffer),
                )
                for q in self._queues.values()
            }
            return BrokerStats(published=self._published, queues=queues)

    def publisher(self, agentType: str, agentName: str) -> "AgentPublisher":
        return AgentPublisher(self, agentType, agentName)

    def __enter__(self) -> "Broker":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class AgentPublisher:
    """Publishing facade bound to one agent identity."""

    def __init__(self, broker: Broker, agentType: str, agentName: str):
        self.broker = broker
        self.agentType = agentType
        self.agentName = agentName

    def log(
        self,
        action: str,
        typeLog: str = "info",
        *,
        sourceUnit: str,
        sourceOperation: str,
        sourceLine: int,
        resource: str,
        message: str = "",
    ) -> PublishReceipt:
        event = make_log_event(
            self.agentType,
            self.agentName,
            action,
            typeLog,
            sourceUnit=sourceUnit,
            sourceOperation=sourceOperation,
            sourceLine=sourceLine,
            resource=resource,
            message=message,
            clock=self.broker.clock,
        )
        return self.broker.publish(event)
