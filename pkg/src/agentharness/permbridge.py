"""Human-in-the-loop coordination point.

A single process-wide bridge suspends executions at tool boundaries and
clarification points, multiplexes any number of concurrent approvals by
request id, and routes each decision back to exactly the execution that is
waiting on it. Suspension blocks only the calling session's thread; the
decision may arrive from any surface (CLI, HTTP, web UI) on any thread.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

from .errors import (
    AlreadyResolvedError,
    InvalidStateError,
    InvalidVariantError,
    NotFoundError,
)

TOOL_PERMISSION = "tool_permission"
USER_QUESTION = "user_question"

_VALID_VARIANTS = {
    TOOL_PERMISSION: ("approve", "deny", "modify"),
    USER_QUESTION: ("answer", "deny"),
}


@dataclass(frozen=True)
class Decision:
    variant: str  # approve | deny | modify | answer
    new_arguments: dict | None = None
    text: str | None = None
    reason: str | None = None

    @classmethod
    def approve(cls) -> "Decision":
        return cls("approve")

    @classmethod
    def deny(cls, reason: str | None = None) -> "Decision":
        return cls("deny", reason=reason)

    @classmethod
    def modify(cls, new_arguments: dict) -> "Decision":
        return cls("modify", new_arguments=new_arguments)

    @classmethod
    def answer(cls, text: str) -> "Decision":
        return cls("answer", text=text)


@dataclass
class PendingRequest:
    request_id: str
    kind: str
    session_id: str
    agent_folder: str
    payload: dict
    created_at: float
    seq: int = 0

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "kind": self.kind,
            "session_id": self.session_id,
            "agent_folder": self.agent_folder,
            "payload": self.payload,
            "created_at": self.created_at,
        }


@dataclass
class _Waiter:
    request: PendingRequest
    event: threading.Event = field(default_factory=threading.Event)
    decision: Decision | None = None
    resolved: bool = False
    validator: object = None  # callable(args) -> list[str] for modify checking


class PermissionBridge:
    """Multiplexes suspended executions onto human decisions, exactly once each.

    The bridge is process-global: constructing a second live instance is a
    configuration error. Call close() (or use it as a context manager) to
    release the slot, e.g. between tests.
    """

    _active: "PermissionBridge | None" = None
    _active_lock = threading.Lock()

    def __init__(self, bus=None, clock=None):
        with PermissionBridge._active_lock:
            if PermissionBridge._active is not None:
                raise InvalidStateError(
                    "a PermissionBridge already exists in this process"
                )
            PermissionBridge._active = self
        self.bus = bus
        self.clock = clock
        self._lock = threading.Lock()
        self._waiters: dict[str, _Waiter] = {}
        self._req_seq = itertools.count(1)
        self.total_first_resolutions = 0
        self.total_resumptions = 0

    def close(self) -> None:
        with PermissionBridge._active_lock:
            if PermissionBridge._active is self:
                PermissionBridge._active = None

    def __enter__(self) -> "PermissionBridge":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- suspension side ----------------------------------------------------

    def _now(self) -> float:
        return self.clock.now() if self.clock is not None else 0.0

    def _suspend(self, kind: str, session, payload: dict, validator=None) -> Decision:
        seq = next(self._req_seq)
        request = PendingRequest(
            request_id=f"req-{seq}",
            kind=kind,
            session_id=getattr(session, "id", str(session)),
            agent_folder=getattr(session, "agent_folder", ""),
            payload=payload,
            created_at=self._now(),
            seq=seq,
        )
        waiter = _Waiter(request=request, validator=validator)
        with self._lock:
            self._waiters[request.request_id] = waiter
        if hasattr(session, "touch"):
            session.touch()
        if self.bus is not None:
            self.bus.emit(
                "permission:request",
                request.session_id,
                {"request": request.to_json()},
            )
        waiter.event.wait()
        decision = waiter.decision
        assert decision is not None
        if hasattr(session, "touch"):
            session.touch()
        with self._lock:
            self.total_resumptions += 1
        if (
            kind == TOOL_PERMISSION
            and decision.variant == "modify"
            and waiter.validator is not None
        ):
            errors = waiter.validator(decision.new_arguments or {})
            if errors:
                return Decision.deny(
                    reason="modified arguments failed the tool schema: "
                    + "; ".join(errors)
                )
        return decision

    def request_tool_permission(
        self, session, tool_name: str, args: dict, rationale: str = "", validator=None
    ) -> Decision:
        """Suspend until a human approves, denies, or modifies the invocation."""
        payload = {"tool": tool_name, "args": args, "rationale": rationale}
        return self._suspend(TOOL_PERMISSION, session, payload, validator=validator)

    def ask_user(self, session, question: str) -> str:
        """Suspend until the user answers; the text comes back as a tool result."""
        decision = self._suspend(USER_QUESTION, session, {"question": question})
        if decision.variant == "answer":
            return decision.text or ""
        return f"(question declined by operator: {decision.reason or 'no reason given'})"

    # -- resolution side ------------------------------------------------------

    def list_pending(self) -> list[PendingRequest]:
        with self._lock:
            pending = [w.request for w in self._waiters.values() if not w.resolved]
        return sorted(pending, key=lambda r: r.seq)

    def has_pending(self, session_id: str) -> bool:
        with self._lock:
            return any(
                w.request.session_id == session_id and not w.resolved
                for w in self._waiters.values()
            )

    def resolve(self, request_id: str, decision: Decision) -> None:
        """Deliver a decision to the suspended execution, exactly once."""
        with self._lock:
            waiter = self._waiters.get(request_id)
            if waiter is None:
                raise NotFoundError(f"no pending request {request_id!r}")
            if waiter.resolved:
                raise AlreadyResolvedError(f"request {request_id!r} already resolved")
            allowed = _VALID_VARIANTS[waiter.request.kind]
            if decision.variant not in allowed:
                raise InvalidVariantError(
                    f"variant {decision.variant!r} not valid for {waiter.request.kind}"
                    f" (allowed: {', '.join(allowed)})"
                )
            if decision.variant == "modify" and decision.new_arguments is None:
                raise InvalidVariantError("modify requires new_arguments")
            if decision.variant == "answer" and decision.text is None:
                raise InvalidVariantError("answer requires text")
            waiter.decision = decision
            waiter.resolved = True
            del self._waiters[waiter.request.request_id]
            self.total_first_resolutions += 1
        if self.bus is not None:
            self.bus.emit(
                "permission:resolved",
                waiter.request.session_id,
                {"request_id": request_id, "variant": decision.variant},
            )
        waiter.event.set()
