"""Typed runtime events and the process-wide event bus.

All lifecycle transitions surface as events: consumers (the gateway stream,
hooks wiring, dirty-marking coupling) react to events instead of reaching
into runtime internals. Delivery never blocks the emitting session: pull
subscriptions buffer into a bounded deque and drop oldest on overflow,
callback sinks are isolated from exceptions.
"""

from __future__ import annotations

import itertools
import json
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

# Core lifecycle kinds emitted by the kernel; the bridge and scheduler add
# permission:* and notify kinds on the same bus.
EVENT_KINDS = (
    "session:start",
    "session:end",
    "compact:start",
    "compact:exec",
    "tool:pre",
    "tool:post",
    "task:start",
    "task:done",
    "error",
    "permission:request",
    "permission:resolved",
    "notify",
)


@dataclass(frozen=True)
class RuntimeEvent:
    kind: str
    session_id: str
    payload: dict
    seq: int = 0
    ts: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "session_id": self.session_id,
                "payload": self.payload,
                "seq": self.seq,
                "ts": self.ts,
            },
            default=str,
        )


@dataclass
class Subscription:
    kinds: frozenset[str] | None  # None = all kinds
    sink: Callable[[RuntimeEvent], None] | None
    buffer: deque = field(default_factory=lambda: deque(maxlen=256))
    dropped: int = 0
    closed: bool = False

    def matches(self, event: RuntimeEvent) -> bool:
        return not self.closed and (self.kinds is None or event.kind in self.kinds)

    def drain(self) -> list[RuntimeEvent]:
        out = list(self.buffer)
        self.buffer.clear()
        return out

    def close(self) -> None:
        self.closed = True


class EventBus:
    """Fan-out of RuntimeEvents with per-bus total ordering."""

    def __init__(self, clock=None):
        self._subs: list[Subscription] = []
        self._lock = threading.Lock()
        self._seq = itertools.count(1)
        self._clock = clock

    def subscribe(
        self,
        kinds: Iterable[str] | None = None,
        sink: Callable[[RuntimeEvent], None] | None = None,
        buffer_size: int = 256,
    ) -> Subscription:
        sub = Subscription(
            kinds=None if kinds is None else frozenset(kinds),
            sink=sink,
            buffer=deque(maxlen=buffer_size),
        )
        with self._lock:
            self._subs.append(sub)
        return sub

    def emit(self, kind: str, session_id: str, payload: dict | None = None) -> RuntimeEvent:
        ts = self._clock.now() if self._clock is not None else 0.0
        with self._lock:
            event = RuntimeEvent(
                kind=kind, session_id=session_id, payload=payload or {}, seq=next(self._seq), ts=ts
            )
            targets = [s for s in self._subs if s.matches(event)]
            for sub in targets:
                if len(sub.buffer) == sub.buffer.maxlen:
                    sub.dropped += 1
                sub.buffer.append(event)
        for sub in targets:
            if sub.sink is not None:
                try:
                    sub.sink(event)
                except Exception:
                    sub.dropped += 1
        return event
