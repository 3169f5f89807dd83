"""Annotated log events, routing keys, and binding patterns.

Every observable action in the system is published as a ten-tag log event.
Eight of the tags form a dot-delimited routing key

    agentType.agentName.action.typeLog.sourceUnit.sourceOperation.sourceLine.resource

while ``timestamp`` and ``message`` travel in the payload.  Consumers bind
queues with patterns over the same grammar, where ``*`` stands for exactly
one word and ``#`` for zero or more words.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

MAX_KEY_BYTES = 255

LOG_TYPES = ("info", "warning", "error")

STAR = "*"
HASH = "#"

#: microseconds of virtual time per simulation tick
TICK_US = 1_000_000


class LogModelError(ValueError):
    """Base class for log event and pattern validation errors."""


class InvalidTag(LogModelError):
    """A tag value is empty or contains a reserved character."""


class KeyTooLong(LogModelError):
    """An encoded routing key exceeds the byte limit."""


class InvalidPattern(LogModelError):
    """A binding pattern is syntactically malformed."""


def _check_word(name: str, value: str) -> str:
    """Validate a single routing-key word (one tag value)."""
    if not isinstance(value, str) or not value:
        raise InvalidTag(f"{name} must be a non-empty string, got {value!r}")
    if "." in value:
        raise InvalidTag(f"{name} may not contain '.': {value!r}")
    if STAR in value or HASH in value:
        raise InvalidTag(f"{name} may not contain wildcard characters: {value!r}")
    if any(c.isspace() for c in value):
        raise InvalidTag(f"{name} may not contain whitespace: {value!r}")
    return value


class EventClock:
    """Monotonic per-run event clock with microsecond granularity.

    Timestamps are strictly increasing across all events drawn from the same
    clock, so a merged timeline has a total order.  The simulation raises the
    floor once per tick (tick ``t`` starts at ``t * TICK_US``), which keeps
    timestamp // TICK_US equal to the tick the event was published on.
    """

    def __init__(self, start: int = 0):
        self._lock = threading.Lock()
        self._next = int(start)

    def next_timestamp(self) -> int:
        with self._lock:
            ts = self._next
            self._next = ts + 1
            return ts

    def advance_to(self, floor: int) -> None:
        """Raise the clock so the next timestamp is at least ``floor``."""
        with self._lock:
            if floor > self._next:
                self._next = int(floor)

    def peek(self) -> int:
        with self._lock:
            return self._next


_module_clock = EventClock()


@dataclass(frozen=True, slots=True)
class LogEvent:
    """One annotated log record.

    ``sourceUnit``/``sourceOperation``/``sourceLine`` identify the emitting
    call site (class, method, line).  ``timestamp`` is in microseconds on the
    run's virtual clock.  ``message`` is free text and the only field allowed
    to contain dots.
    """

    agentType: str
    agentName: str
    action: str
    typeLog: str
    sourceUnit: str
    sourceOperation: str
    sourceLine: int
    resource: str
    timestamp: int
    message: str = ""

    def key_segments(self) -> tuple[str, ...]:
        return (
            self.agentType,
            self.agentName,
            self.action,
            self.typeLog,
            self.sourceUnit,
            self.sourceOperation,
            str(self.sourceLine),
            self.resource,
        )

    @property
    def tick(self) -> int:
        return self.timestamp // TICK_US


def make_log_event(
    agentType: str,
    agentName: str,
    action: str,
    typeLog: str = "info",
    *,
    sourceUnit: str,
    sourceOperation: str,
    sourceLine: int,
    resource: str,
    message: str = "",
    clock: EventClock | None = None,
) -> LogEvent:
    """Validate tags and stamp a new event from the given clock.

    ``typeLog`` is normalised to lower case and must be one of info,
    warning, error.  Raises InvalidTag on any malformed tag.
    """
    typeLog = typeLog.lower()
    if typeLog not in LOG_TYPES:
        raise InvalidTag(f"typeLog must be one of {LOG_TYPES}, got {typeLog!r}")
    _check_word("agentType", agentType)
    _check_word("agentName", agentName)
    _check_word("action", action)
    _check_word("sourceUnit", sourceUnit)
    _check_word("sourceOperation", sourceOperation)
    _check_word("resource", resource)
    if not isinstance(sourceLine, int) or isinstance(sourceLine, bool) or sourceLine < 0:
        raise InvalidTag(f"sourceLine must be a non-negative int, got {sourceLine!r}")
    if not isinstance(message, str):
        raise InvalidTag(f"message must be a string, got {message!r}")
    if "\n" in message or "\r" in message:
        # the tab-separated tap line format must round-trip
        raise InvalidTag("message may not contain newlines")
    if clock is None:
        clock = _module_clock
    event = LogEvent(
        agentType=agentType,
        agentName=agentName,
        action=action,
        typeLog=typeLog,
        sourceUnit=sourceUnit,
        sourceOperation=sourceOperation,
        sourceLine=sourceLine,
        resource=resource,
        timestamp=clock.next_timestamp(),
        message=message,
    )
    # an event whose key cannot be encoded is rejected at creation time
    routing_key(event)
    return event


@dataclass(frozen=True, slots=True)
class RoutingKey:
    """Encoded destination of one event: eight literal words."""

    segments: tuple[str, ...]

    def __post_init__(self):
        if not self.segments:
            raise InvalidTag("routing key needs at least one segment")
        for seg in self.segments:
            _check_word("key segment", seg)
        if len(self.encode().encode("utf-8")) > MAX_KEY_BYTES:
            raise KeyTooLong(f"routing key exceeds {MAX_KEY_BYTES} bytes")

    def encode(self) -> str:
        return ".".join(self.segments)

    def __str__(self) -> str:
        return self.encode()


def routing_key(event: LogEvent) -> RoutingKey:
    """Derive the eight-segment routing key of an event.

    Raises KeyTooLong if the dotted form exceeds MAX_KEY_BYTES bytes of
    UTF-8, mirroring the transport limit of topic exchanges.
    """
    return RoutingKey(event.key_segments())


@dataclass(frozen=True, slots=True)
class BindingPattern:
    """A topic pattern: literal words mixed with ``*`` and ``#`` segments."""

    segments: tuple[str, ...]

    def __post_init__(self):
        if not self.segments:
            raise InvalidPattern("pattern needs at least one segment")
        for seg in self.segments:
            if seg in (STAR, HASH):
                continue
            if not seg:
                raise InvalidPattern(f"empty segment in pattern {self.encode()!r}")
            if STAR in seg or HASH in seg:
                raise InvalidPattern(
                    f"wildcard must be a whole segment, got {seg!r}"
                )
            _check_word("pattern segment", seg)
        if len(self.encode().encode("utf-8")) > MAX_KEY_BYTES:
            raise InvalidPattern(f"pattern exceeds {MAX_KEY_BYTES} bytes")

    def encode(self) -> str:
        return ".".join(self.segments)

    @property
    def has_wildcards(self) -> bool:
        return any(seg in (STAR, HASH) for seg in self.segments)

    def __str__(self) -> str:
        return self.encode()


def parse_binding_pattern(text: str) -> BindingPattern:
    """Parse the dotted text form of a binding pattern.

    Raises InvalidPattern for an empty string, an empty segment (leading,
    trailing, or doubled dot), a wildcard glued to other characters, or an
    over-long pattern.
    """
    if not isinstance(text, str) or not text:
        raise InvalidPattern("pattern must be a non-empty string")
    try:
        return BindingPattern(tuple(text.split(".")))
    except InvalidTag as exc:
        raise InvalidPattern(str(exc)) from exc


def serialize_event(event: LogEvent) -> str:
    """Encode an event as one tap line: key, timestamp, message, tab-separated."""
    return f"{routing_key(event).encode()}\t{event.timestamp}\t{event.message}"


def parse_event_line(line: str) -> LogEvent:
    """Inverse of serialize_event.  Raises LogModelError on malformed input."""
    line = line.rstrip("\n")
    parts = line.split("\t", 2)
    if len(parts) != 3:
        raise LogModelError(f"expected key<TAB>timestamp<TAB>message, got {line!r}")
    key_text, ts_text, message = parts
    segments = key_text.split(".")
    if len(segments) != 8:
        raise LogModelError(f"routing key must have 8 segments, got {key_text!r}")
    try:
        timestamp = int(ts_text)
    except ValueError:
        raise LogModelError(f"bad timestamp {ts_text!r}") from None
    try:
        line_no = int(segments[6])
    except ValueError:
        raise LogModelError(f"bad sourceLine segment {segments[6]!r}") from None
    event = LogEvent(
        agentType=segments[0],
        agentName=segments[1],
        action=segments[2],
        typeLog=segments[3],
        sourceUnit=segments[4],
        sourceOperation=segments[5],
        sourceLine=line_no,
        resource=segments[7],
        timestamp=timestamp,
        message=message,
    )
    if event.typeLog not in LOG_TYPES:
        raise LogModelError(f"bad typeLog segment {segments[3]!r}")
    routing_key(event)
    return event


def load_tap(path) -> list[LogEvent]:
    """Read a tap file written by the broker back into events."""
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                events.append(parse_event_line(raw))
    return events
