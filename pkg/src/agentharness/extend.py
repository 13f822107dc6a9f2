"""Four-layer extension surface: tools, skills, hooks.

Tools are typed in-process registrations; the tier decides whether an
invocation is pre-authorized (internal, bundled with the runtime) or gated
through the permission bridge (external, the default for anything user
installed). Skills load lazily at two levels: an active skill contributes
only its name and description to context until a named section is pulled
in. Hooks are lifecycle callbacks that can observe, modify, or block.
"""

from __future__ import annotations

import copy
import itertools
import json
import subprocess
import threading
import types
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import yaml

from .errors import InvalidStateError, NotFoundError, ValidationError
from .permbridge import PermissionBridge

INTERNAL = "internal"
EXTERNAL = "external"

_TYPE_CHECKS = {
    "string": str,
    "integer": int,
    "number": (int, float),
    "boolean": bool,
    "object": dict,
    "array": list,
}


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str = "string"
    required: bool = False

    def __post_init__(self):
        if self.type not in _TYPE_CHECKS:
            raise ValidationError(f"unknown parameter type {self.type!r}")


@dataclass
class ToolSpec:
    name: str
    description: str
    schema: list[ToolParam] = field(default_factory=list)
    tier: str = EXTERNAL
    handler: Callable | None = None
    examples: list[dict] = field(default_factory=list)
    strict: bool = True  # False lets undeclared arguments pass through


def validate_args(spec: ToolSpec, args: dict) -> list[str]:
    errors = []
    known = {p.name for p in spec.schema}
    for p in spec.schema:
        if p.required and p.name not in args:
            errors.append(f"missing required argument {p.name!r}")
        elif p.name in args and args[p.name] is not None:
            expected = _TYPE_CHECKS[p.type]
            if p.type == "number" and isinstance(args[p.name], bool):
                errors.append(f"argument {p.name!r} must be a number")
            elif not isinstance(args[p.name], expected):
                errors.append(f"argument {p.name!r} must be of type {p.type}")
    if spec.strict:
        for key in args:
            if key not in known:
                errors.append(f"unknown argument {key!r}")
    return errors


class ToolRegistry:
    def __init__(self):
        self._specs: dict[str, ToolSpec] = {}
        self._lock = threading.Lock()

    def register(self, spec: ToolSpec) -> ToolSpec:
        with self._lock:
            if spec.name in self._specs:
                raise ValidationError(f"tool {spec.name!r} already registered")
            for example in spec.examples:
                errs = validate_args(spec, example)
                if errs:
                    raise ValidationError(
                        f"tool {spec.name!r} schema rejects its own example: {errs}"
                    )
            self._specs[spec.name] = spec
        return spec

    def get(self, name: str) -> ToolSpec:
        with self._lock:
            if name not in self._specs:
                raise NotFoundError(f"no tool named {name!r}")
            return self._specs[name]

    def maybe_get(self, name: str) -> ToolSpec | None:
        with self._lock:
            return self._specs.get(name)

    def classify_tool(self, name: str) -> str:
        """Permission tier: internal tools invoke without consent, external gate."""
        return self.get(name).tier

    def names(self) -> list[str]:
        with self._lock:
            return sorted(self._specs)

    def specs(self) -> list[ToolSpec]:
        with self._lock:
            return [self._specs[n] for n in sorted(self._specs)]


# -- hooks -------------------------------------------------------------------

HOOK_EVENTS = (
    "task:start",
    "tool:pre",
    "tool:post",
    "permission:request",
    "compact:exec",
    "task:done",
    "error",
)

OBSERVE = "observe"
MODIFY = "modify"
BLOCK = "block"

CONTINUE_VERDICT = "continue"
BLOCK_VERDICT = "block"


@dataclass(frozen=True)
class HookRegistration:
    hook_id: str
    event: str
    capability: str  # observe | modify | block
    handler: Callable
    order: int = 0

    def __post_init__(self):
        if self.event not in HOOK_EVENTS:
            raise ValidationError(f"unknown hook event {self.event!r}")
        if self.capability not in (OBSERVE, MODIFY, BLOCK):
            raise ValidationError(f"unknown hook capability {self.capability!r}")


class HookRegistry:
    def __init__(self):
        self._hooks: list[HookRegistration] = []
        self._lock = threading.Lock()
        self._seq = itertools.count(1)

    def register(self, reg: HookRegistration) -> HookRegistration:
        with self._lock:
            if any(h.hook_id == reg.hook_id for h in self._hooks):
                raise ValidationError(f"hook {reg.hook_id!r} already registered")
            self._hooks.append(reg)
        return reg

    def register_callable(
        self, event: str, capability: str, handler: Callable, order: int = 0
    ) -> HookRegistration:
        return self.register(
            HookRegistration(
                hook_id=f"hook-{next(self._seq)}",
                event=event,
                capability=capability,
                handler=handler,
                order=order,
            )
        )

    def unregister(self, hook_id: str) -> None:
        with self._lock:
            before = len(self._hooks)
            self._hooks = [h for h in self._hooks if h.hook_id != hook_id]
            if len(self._hooks) == before:
                raise NotFoundError(f"no hook {hook_id!r}")

    def list(self) -> list[HookRegistration]:
        with self._lock:
            return sorted(self._hooks, key=lambda h: (h.event, h.order, h.hook_id))

    def fire(self, event: str, payload: dict) -> tuple[dict, str]:
        """Run the chain in order-key order; first block verdict stops it.

        Observe handlers get a read-only snapshot; modify handlers thread the
        payload left to right; block handlers stop the chain by returning
        the string "block" (anything else continues).
        """
        with self._lock:
            chain = sorted(
                (h for h in self._hooks if h.event == event),
                key=lambda h: (h.order, h.hook_id),
            )
        current = payload
        for hook in chain:
            if hook.capability == OBSERVE:
                snapshot = types.MappingProxyType(copy.deepcopy(current))
                try:
                    hook.handler(snapshot)
                except Exception:
                    pass
                continue
            if hook.capability == MODIFY:
                try:
                    result = hook.handler(dict(current))
                except Exception:
                    continue
                if isinstance(result, dict):
                    current = result
                continue
            # block capability
            try:
                verdict = hook.handler(types.MappingProxyType(copy.deepcopy(current)))
            except Exception:
                continue
            if verdict == BLOCK_VERDICT or verdict is True:
                return current, BLOCK_VERDICT
        return current, CONTINUE_VERDICT


def external_hook_handler(executable: Path | str) -> Callable:
    """Wrap an executable as a hook handler.

    Protocol: JSON payload on stdin; exit 0 continues, exit 3 blocks; a
    modify hook may print the replacement payload as JSON on stdout.
    """
    executable = str(executable)

    def handler(payload):
        proc = subprocess.run(
            [executable],
            input=json.dumps(dict(payload)).encode("utf-8"),
            capture_output=True,
            timeout=30,
        )
        if proc.returncode == 3:
            return BLOCK_VERDICT
        out = proc.stdout.decode("utf-8").strip()
        if out:
            try:
                return json.loads(out)
            except json.JSONDecodeError:
                return None
        return None

    return handler


# -- skills --------------------------------------------------------------------

SKILL_FILE = "SKILL.md"
_STATE_FILE = ".active.json"


@dataclass(frozen=True)
class SkillManifest:
    skill_id: str
    name: str
    description: str
    active: bool


@dataclass
class _SkillRecord:
    manifest: SkillManifest
    sections: dict[str, str]
    routes: dict[str, str]


def parse_skill_file(text: str) -> tuple[str, str, dict[str, str], dict[str, str]]:
    """Split SKILL.md into (name, description, sections, routing directives)."""
    meta: dict = {}
    body = text
    if text.startswith("---\n"):
        end = text.find("\n---\n", 4)
        if end != -1:
            meta = yaml.safe_load(text[4:end]) or {}
            body = text[end + 5 :]
    sections: dict[str, str] = {}
    routes: dict[str, str] = {}
    current: str | None = None
    lines: list[str] = []
    for line in body.splitlines():
        if line.startswith("## "):
            if current is not None:
                sections[current] = "\n".join(lines).strip()
            current = line[3:].strip()
            if current in sections:
                raise ValidationError(f"duplicate skill section {current!r}")
            lines = []
        elif current is not None:
            if not lines and line.startswith("route:"):
                routes[current] = line[len("route:") :].strip()
            else:
                lines.append(line)
    if current is not None:
        sections[current] = "\n".join(lines).strip()
    return str(meta.get("name", "")), str(meta.get("description", "")), sections, routes


class SkillStore:
    """Directory of skill packages with live activation toggles.

    Each skill is <root>/<skill_id>/SKILL.md: YAML frontmatter carries name
    and description, the body is split into "## <section>" blocks.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _load_active(self) -> dict[str, bool]:
        path = self.root / _STATE_FILE
        if path.exists():
            return json.loads(path.read_text(encoding="utf-8"))
        return {}

    def _save_active(self, state: dict[str, bool]) -> None:
        (self.root / _STATE_FILE).write_text(json.dumps(state, indent=2), encoding="utf-8")

    def _scan(self) -> dict[str, _SkillRecord]:
        active = self._load_active()
        records: dict[str, _SkillRecord] = {}
        for entry in sorted(self.root.iterdir()):
            skill_md = entry / SKILL_FILE
            if not entry.is_dir() or not skill_md.exists():
                continue
            name, description, sections, routes = parse_skill_file(
                skill_md.read_text(encoding="utf-8")
            )
            records[entry.name] = _SkillRecord(
                manifest=SkillManifest(
                    skill_id=entry.name,
                    name=name or entry.name,
                    description=description,
                    active=bool(active.get(entry.name, False)),
                ),
                sections=sections,
                routes=routes,
            )
        return records

    def list_skills(self) -> list[SkillManifest]:
        """Name, description, and active flag only; section content stays on disk."""
        return [r.manifest for r in self._scan().values()]

    def set_skill_active(self, skill_id: str, active: bool) -> None:
        with self._lock:
            if skill_id not in self._scan():
                raise NotFoundError(f"no skill {skill_id!r}")
            state = self._load_active()
            state[skill_id] = bool(active)
            self._save_active(state)

    def load_skill_section(self, skill_id: str, section: str) -> str:
        records = self._scan()
        if skill_id not in records:
            raise NotFoundError(f"no skill {skill_id!r}")
        record = records[skill_id]
        if not record.manifest.active:
            raise InvalidStateError(f"skill {skill_id!r} is not active")
        if section not in record.sections:
            raise NotFoundError(f"skill {skill_id!r} has no section {section!r}")
        return record.sections[section]

    def sections_of(self, skill_id: str) -> list[str]:
        records = self._scan()
        if skill_id not in records:
            raise NotFoundError(f"no skill {skill_id!r}")
        return list(records[skill_id].sections)

    def context_lines(self) -> list[str]:
        """One name+description line per active skill: the level-1 lazy cost."""
        return [
            f"{r.manifest.name}: {r.manifest.description}"
            for r in self._scan().values()
            if r.manifest.active
        ]


# -- invocation ---------------------------------------------------------------


class ExtensionHost:
    """Routes a tool call through hooks, the permission gate, and the handler."""

    def __init__(
        self,
        tools: ToolRegistry,
        hooks: HookRegistry,
        bridge: PermissionBridge | None = None,
        skills: SkillStore | None = None,
        bus=None,
    ):
        self.tools = tools
        self.hooks = hooks
        self.bridge = bridge
        self.skills = skills
        self.bus = bus

    def _emit(self, session, kind: str, payload: dict) -> None:
        if session is not None and hasattr(session, "_emit"):
            session._emit(kind, payload)
        elif self.bus is not None:
            self.bus.emit(kind, getattr(session, "id", ""), payload)

    def invoke_tool(self, session, name: str, args: dict, rationale: str = "") -> str:
        """Run one tool call to a structured result text; never raises to the loop."""
        spec = self.tools.maybe_get(name)
        self._emit(session, "tool:pre", {"tool": name, "args": args})
        outcome = "ok"
        try:
            if spec is None:
                outcome = "unknown_tool"
                return f"tool error: no tool named {name!r} is registered"
            errors = validate_args(spec, args)
            if errors:
                outcome = "invalid_args"
                return "validation error: " + "; ".join(errors)
            payload, verdict = self.hooks.fire(
                "tool:pre", {"tool": name, "args": args, "session_id": getattr(session, "id", "")}
            )
            if verdict == BLOCK_VERDICT:
                outcome = "blocked"
                return f"blocked: a tool:pre hook vetoed the call to {name!r}"
            args = payload.get("args", args)
            if spec.tier == EXTERNAL:
                gate, gate_verdict = self.hooks.fire(
                    "permission:request",
                    {"tool": name, "args": args, "rationale": rationale},
                )
                if gate_verdict == BLOCK_VERDICT:
                    outcome = "denied"
                    return f"permission denied: a policy hook vetoed {name!r}"
                args = gate.get("args", args)
                if not gate.get("auto_approve"):
                    if self.bridge is None:
                        outcome = "denied"
                        return "permission denied: no approval surface available"
                    decision = self.bridge.request_tool_permission(
                        session,
                        name,
                        args,
                        rationale,
                        validator=lambda a, s=spec: validate_args(s, a),
                    )
                    if decision.variant == "deny":
                        outcome = "denied"
                        return (
                            "permission denied: "
                            + (decision.reason or "the operator declined this call")
                        )
                    if decision.variant == "modify":
                        args = decision.new_arguments or {}
            try:
                result = spec.handler(session, args) if spec.handler else ""
            except Exception as exc:
                outcome = "handler_error"
                return f"tool error: {type(exc).__name__}: {exc}"
            post_payload, _ = self.hooks.fire(
                "tool:post", {"tool": name, "args": args, "result": result}
            )
            return str(post_payload.get("result", result))
        finally:
            self._emit(session, "tool:post", {"tool": name, "outcome": outcome})
