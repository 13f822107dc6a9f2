"""Per-session reason/act loop with automatic history compaction.

One session is one logical thread of execution over a pluggable model
adapter. The ledger owns the in-window message history and its token
accounting; when the accumulated count plus an 8,000-token headroom buffer
crosses 75% of the configured context limit, compaction runs inline:
summarize on success, truncate to 50% of the limit on adapter failure, and
in both outcomes re-inject the persona reminders that the compression
boundary would otherwise erase.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from .adapters import Reply, ToolCall
from .context import AgentIdentity, PersonaBundle, resolve_persona
from .errors import AdapterError, InvalidStateError, NotFoundError, ValidationError
from .events import EventBus, RuntimeEvent
from .tokens import count_tokens

ROLES = ("system", "user", "assistant", "tool")

COMPACTION_BUFFER_TOKENS = 8000
COMPACTION_TRIGGER_FRACTION = 0.75
TRUNCATION_FRACTION = 0.5
MIN_CONTEXT_LIMIT = 16000
DEFAULT_IDLE_TIMEOUT = 30 * 60.0

TRUNCATION_NOTICE = (
    "History was truncated after a failed compaction; older messages were dropped."
)

MAX_LOOP_STEPS = 64
STEP_RETRIES = 1


@dataclass(frozen=True)
class SessionConfig:
    agent_id: str
    context_limit: int
    model_adapter_id: str = "scripted"
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT

    def __post_init__(self):
        if self.context_limit < MIN_CONTEXT_LIMIT:
            raise ValidationError(
                f"context_limit must be >= {MIN_CONTEXT_LIMIT}, got {self.context_limit}"
            )
        if self.idle_timeout <= 0:
            raise ValidationError("idle_timeout must be positive")


@dataclass(frozen=True)
class Message:
    role: str
    text: str


class ContextLedger:
    """Ordered message history with exact token accounting."""

    def __init__(self):
        self.messages: list[Message] = []
        self.token_count = 0
        self.compaction_count = 0
        self.last_activity = 0.0

    def append(self, role: str, text: str) -> Message:
        if role not in ROLES:
            raise ValidationError(f"unknown message role {role!r}")
        msg = Message(role=role, text=text)
        self.messages.append(msg)
        self.token_count += count_tokens(text)
        return msg

    def recount(self) -> int:
        return sum(count_tokens(m.text) for m in self.messages)

    def replace(self, messages: list[Message]) -> None:
        self.messages = list(messages)
        self.token_count = self.recount()


@dataclass(frozen=True)
class CompactionReport:
    tokens_before: int
    tokens_after: int
    ratio: float
    mode: str  # "summarized" | "truncation_fallback"
    summary_text: str


def should_compact(ledger: ContextLedger, config: SessionConfig) -> bool:
    """True iff token_count + 8000 > 0.75 * context_limit (exact integer test)."""
    return 4 * (ledger.token_count + COMPACTION_BUFFER_TOKENS) > 3 * config.context_limit


_session_seq = itertools.count(1)


class Session:
    """A single agent conversation: serialized turns, inline compaction.

    Collaborators are injected so the session works standalone in tests:
    `extensions` routes tool calls (hooks + permission gate), `on_user_prompt`
    feeds the daily logger, `on_compact` marks the day's log dirty.
    """

    def __init__(
        self,
        config: SessionConfig,
        identity: AgentIdentity,
        adapter,
        bus: EventBus,
        clock,
        extensions=None,
        on_user_prompt: Callable[[str, float], None] | None = None,
        on_compact: Callable[[str, float], None] | None = None,
        skills=None,
        todos_enabled: bool = False,
    ):
        self.id = f"{identity.folder}#{next(_session_seq)}"
        self.config = config
        self.identity = identity
        self.agent_folder = identity.folder
        self.adapter = adapter
        self.bus = bus
        self.clock = clock
        self.extensions = extensions
        self.skills = skills
        self.on_user_prompt = on_user_prompt
        self.on_compact = on_compact
        self.todos_enabled = todos_enabled
        self.todos: list[str] = []
        self.current_workspace = Path(identity.default_workspace)
        self.ledger = ContextLedger()
        self.open = True
        self._turn_lock = threading.RLock()
        self.ledger.last_activity = clock.now()
        self._emit("session:start", {"agent": identity.folder})

    # -- plumbing ---------------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> RuntimeEvent:
        return self.bus.emit(kind, self.id, payload)

    def touch(self) -> None:
        self.ledger.last_activity = self.clock.now()

    @property
    def last_activity(self) -> float:
        return self.ledger.last_activity

    def persona(self) -> PersonaBundle:
        return resolve_persona(self.identity, self.current_workspace)

    def switch_workspace(self, new_path: Path | str) -> PersonaBundle:
        """Point workspace context at a new directory; identity and history stay."""
        path = Path(new_path)
        if not path.is_dir():
            raise NotFoundError(f"workspace {path} does not exist")
        self.current_workspace = path
        return self.persona()

    def context_snapshot(self) -> list[dict]:
        """The exact message list handed to the adapter on the next step."""
        preamble = self.persona().render()
        if self.skills is not None:
            lines = self.skills.context_lines()
            if lines:
                preamble += "\n\n## Skills\n" + "\n".join(lines)
        snapshot = [{"role": "system", "text": preamble}]
        snapshot.extend({"role": m.role, "text": m.text} for m in self.ledger.messages)
        return snapshot

    def _reminder_text(self) -> str:
        text = self.persona().render()
        if self.todos_enabled and self.todos:
            text += "\n\n## Todos\n" + "\n".join(f"- {t}" for t in self.todos)
        elif self.todos_enabled:
            text += "\n\n## Todos\n(none recorded)"
        return text

    def _append(self, role: str, text: str) -> None:
        self.ledger.append(role, text)
        if should_compact(self.ledger, self.config):
            self.compact()

    # -- compaction -------------------------------------------------------

    def compact(self) -> CompactionReport:
        """Compress history: summarize, or truncate to 50% of the limit on failure."""
        if not self.ledger.messages:
            raise InvalidStateError("cannot compact an empty ledger")
        tokens_before = self.ledger.token_count
        self._emit("compact:start", {"tokens_before": tokens_before})
        reminder = Message(role="user", text=self._reminder_text())
        try:
            summary = self.adapter.summarize(
                [{"role": m.role, "text": m.text} for m in self.ledger.messages]
            )
            summary_msg = Message(role="assistant", text=summary)
            self.ledger.replace([summary_msg, reminder])
            self.ledger.compaction_count += 1
            tokens_after = self.ledger.token_count
            ratio = tokens_after / tokens_before if tokens_before else 1.0
            report = CompactionReport(
                tokens_before=tokens_before,
                tokens_after=tokens_after,
                ratio=ratio,
                mode="summarized",
                summary_text=summary,
            )
            self._emit(
                "compact:exec",
                {
                    "tokens_before": tokens_before,
                    "tokens_after": tokens_after,
                    "ratio": ratio,
                    "summary_text": summary,
                },
            )
        except AdapterError:
            report = self._truncation_fallback(tokens_before, reminder)
        if self.on_compact is not None:
            self.on_compact(self.agent_folder, self.clock.now())
        return report

    def _truncation_fallback(self, tokens_before: int, reminder: Message) -> CompactionReport:
        budget = int(TRUNCATION_FRACTION * self.config.context_limit)
        notice = Message(role="system", text=TRUNCATION_NOTICE)
        overhead = count_tokens(notice.text) + count_tokens(reminder.text)
        kept = list(self.ledger.messages)
        last_user = None
        for m in reversed(kept):
            if m.role == "user":
                last_user = m
                break
        # Drop whole messages oldest-first until the rebuilt ledger fits,
        # never dropping the most recent user message.
        def total(msgs):
            return overhead + sum(count_tokens(m.text) for m in msgs)

        while kept and total(kept) > budget:
            candidate = kept[0]
            if candidate is last_user and len(kept) == 1:
                break
            if candidate is last_user:
                # keep it: move past by dropping the next-oldest instead
                dropped = False
                for i in range(1, len(kept)):
                    if kept[i] is not last_user:
                        kept.pop(i)
                        dropped = True
                        break
                if not dropped:
                    break
            else:
                kept.pop(0)
        self.ledger.replace([notice, *kept, reminder])
        self.ledger.compaction_count += 1
        tokens_after = self.ledger.token_count
        self._emit(
            "error",
            {"where": "compact", "detail": "summarizer failed; truncation fallback applied"},
        )
        return CompactionReport(
            tokens_before=tokens_before,
            tokens_after=tokens_after,
            ratio=tokens_after / tokens_before if tokens_before else 1.0,
            mode="truncation_fallback",
            summary_text="",
        )

    # -- the loop ---------------------------------------------------------

    def submit_turn(self, user_message: str) -> tuple[str, list[RuntimeEvent]]:
        """Run one user turn to a final reply; returns the reply and event trace."""
        if not self.open:
            raise InvalidStateError(f"session {self.id} is closed")
        with self._turn_lock:
            # The turn trace is everything this session put on the bus during
            # the turn, bridge-emitted permission events included.
            trace: list[RuntimeEvent] = []
            sub = self.bus.subscribe(
                None,
                sink=lambda e: trace.append(e) if e.session_id == self.id else None,
                buffer_size=1,
            )
            try:
                self.touch()
                self._emit("task:start", {"message": user_message[:200]})
                if self.on_user_prompt is not None:
                    self.on_user_prompt(user_message, self.clock.now())
                self._append("user", user_message)
                for _ in range(MAX_LOOP_STEPS):
                    outcome = self._step_with_retry()
                    if isinstance(outcome, Reply):
                        self._append("assistant", outcome.text)
                        self._emit("task:done", {"reply": outcome.text[:200]})
                        self.touch()
                        return outcome.text, trace
                    assert isinstance(outcome, ToolCall)
                    result = self._run_tool(outcome)
                    self._append("tool", result)
                raise AdapterError(
                    f"no final reply after {MAX_LOOP_STEPS} loop steps"
                )
            finally:
                sub.close()

    def _step_with_retry(self):
        last_exc: AdapterError | None = None
        for _ in range(1 + STEP_RETRIES):
            try:
                return self.adapter.step(self.context_snapshot())
            except AdapterError as exc:
                last_exc = exc
        self._emit("error", {"where": "adapter.step", "detail": str(last_exc)})
        raise last_exc

    def _run_tool(self, call: ToolCall) -> str:
        if self.extensions is None:
            return f"tool error: no tool host attached (call to {call.tool!r})"
        return self.extensions.invoke_tool(self, call.tool, call.args, call.rationale)

    def close(self) -> None:
        if self.open:
            self.open = False
            self._emit("session:end", {"agent": self.agent_folder})


class SessionManager:
    """Holds live sessions; reaps idle ones unless a human decision is pending."""

    def __init__(self, clock, bridge=None):
        self.clock = clock
        self.bridge = bridge
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def add(self, session: Session) -> Session:
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self._sessions:
                raise NotFoundError(f"no session {session_id!r}")
            return self._sessions[session_id]

    def for_agent(self, folder: str) -> Session | None:
        with self._lock:
            for s in self._sessions.values():
                if s.agent_folder == folder and s.open:
                    return s
        return None

    def touch_agent(self, folder: str) -> None:
        session = self.for_agent(folder)
        if session is not None:
            session.touch()

    def all(self) -> list[Session]:
        with self._lock:
            return list(self._sessions.values())

    def reap_idle(self, now: float | None = None) -> list[str]:
        now = self.clock.now() if now is None else now
        reaped = []
        for session in self.all():
            if not session.open:
                continue
            if self.bridge is not None and self.bridge.has_pending(session.id):
                continue
            if now - session.last_activity > session.config.idle_timeout:
                session.close()
                reaped.append(session.id)
        return reaped


def utc_date(ts: float) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%d")
