"""Model adapters.

The runtime talks to the language model through two capabilities only:
step(context) yielding either a final reply or a tool call, and
summarize(messages) yielding compacted history text. ScriptedAdapter drives
both from a declarative program so every mechanism is testable without a
real model; HttpAdapter is the production-facing binding and is not
exercised by the test suite.
"""

from __future__ import annotations

import json
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AdapterError, ValidationError


@dataclass(frozen=True)
class Reply:
    text: str


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: dict = field(default_factory=dict)
    rationale: str = ""


StepOutcome = Reply | ToolCall


class ScriptedAdapter:
    """Adapter driven by an ordered list of step outcomes.

    Program steps are dicts:
      {"kind": "reply", "text": "..."}
      {"kind": "tool_call", "tool": "...", "args": {...}, "rationale": "..."}
      {"kind": "fail", "message": "..."}

    summarize() returns `summary_text` when given, a deterministic digest of
    the history otherwise, and raises when `summary_fail` is set (exercises
    the truncation fallback).
    """

    def __init__(
        self,
        steps: list[dict] | None = None,
        summary_text: str | None = None,
        summary_fail: bool = False,
    ):
        self._steps = list(steps or [])
        self._cursor = 0
        self.summary_text = summary_text
        self.summary_fail = summary_fail
        self.step_calls = 0
        self.summarize_calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedAdapter":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_program(data)

    @classmethod
    def from_program(cls, data) -> "ScriptedAdapter":
        if isinstance(data, list):
            return cls(steps=data)
        if isinstance(data, dict):
            summary = data.get("summary") or {}
            return cls(
                steps=data.get("steps") or [],
                summary_text=summary.get("text"),
                summary_fail=bool(summary.get("fail")),
            )
        raise ValidationError("adapter program must be a JSON list of steps or an object with 'steps'")

    def step(self, context: list[dict]) -> StepOutcome:
        self.step_calls += 1
        if self._cursor >= len(self._steps):
            return Reply("(end of scripted program)")
        raw = self._steps[self._cursor]
        self._cursor += 1
        kind = raw.get("kind")
        if kind == "reply":
            return Reply(str(raw.get("text", "")))
        if kind == "tool_call":
            return ToolCall(
                tool=str(raw.get("tool", "")),
                args=dict(raw.get("args") or {}),
                rationale=str(raw.get("rationale", "")),
            )
        if kind == "fail":
            raise AdapterError(str(raw.get("message", "scripted step failure")))
        raise ValidationError(f"unknown scripted step kind: {kind!r}")

    def summarize(self, messages: list[dict]) -> str:
        self.summarize_calls += 1
        if self.summary_fail:
            raise AdapterError("scripted summarizer failure")
        if self.summary_text is not None:
            return self.summary_text
        head = messages[0]["text"][:80] if messages else ""
        return f"Summary of {len(messages)} prior messages. Opening context: {head}"


class HttpAdapter:
    """Chat-completions-style JSON adapter; integration only, not under test."""

    def __init__(self, endpoint: str, model: str = "default", timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout

    def _post(self, messages: list[dict]) -> dict:
        body = json.dumps({"model": self.model, "messages": messages}).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except Exception as exc:
            raise AdapterError(f"http adapter call failed: {exc}") from exc

    def step(self, context: list[dict]) -> StepOutcome:
        data = self._post(context)
        try:
            message = data["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise AdapterError(f"malformed adapter response: {exc}") from exc
        calls = message.get("tool_calls") or []
        if calls:
            fn = calls[0].get("function") or {}
            try:
                args = json.loads(fn.get("arguments") or "{}")
            except json.JSONDecodeError:
                args = {}
            return ToolCall(tool=fn.get("name", ""), args=args)
        return Reply(message.get("content") or "")

    def summarize(self, messages: list[dict]) -> str:
        prompt = [
            {"role": "system", "text": "Summarize the conversation, preserving constraints and open work."},
            *messages,
        ]
        outcome = self.step(prompt)
        if isinstance(outcome, Reply):
            return outcome.text
        raise AdapterError("summarizer returned a tool call")
