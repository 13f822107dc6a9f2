"""DAG task groups executed by a deterministic scheduler.

An admin agent declares a goal plus a dependency graph of tasks; the graph
is cycle-checked before it persists. At most one group per admin is active
at a time, later declarations queue and promote in creation order. The
scheduler tick (every 300 ms in production) first times out overdue
processing tasks, then dispatches every registered task whose dependencies
have all reached a terminal state — done, error, and timeout all unblock
downstream work. All state lives in a JSON file guarded by a lock file, so
a subprocess tool endpoint and the main process share one source of truth.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .clock import WallClock
from .errors import (
    AmbiguityError,
    LockContentionError,
    NotFoundError,
    ValidationError,
    WaitTimeoutError,
)

SCHEMA_VERSION = 1
TICK_INTERVAL = 0.3
POLL_INTERVAL = 0.5
HEARTBEAT_INTERVAL = 120.0
DEFAULT_TASK_TIMEOUT = 600.0
STALE_LOCK_SECONDS = 30.0
PROCESSING_GRACE = 60.0

TERMINAL_STATES = ("done", "error", "timeout")


@dataclass
class TaskNode:
    label: str
    agent_name: str
    prompt: str
    depends_on: list[str] = field(default_factory=list)
    status: str = "registered"
    agent_folder: str = ""
    declared_timeout: float = DEFAULT_TASK_TIMEOUT
    timeout_at: float | None = None
    result: str | None = None
    error: str | None = None
    started_at: float | None = None
    finished_at: float | None = None

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL_STATES

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "agent_name": self.agent_name,
            "agent_folder": self.agent_folder,
            "prompt": self.prompt,
            "depends_on": list(self.depends_on),
            "status": self.status,
            "declared_timeout": self.declared_timeout,
            "timeout_at": self.timeout_at,
            "result": self.result,
            "error": self.error,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_json(cls, row: dict) -> "TaskNode":
        return cls(
            label=row["label"],
            agent_name=row["agent_name"],
            agent_folder=row.get("agent_folder", ""),
            prompt=row["prompt"],
            depends_on=list(row.get("depends_on") or []),
            status=row.get("status", "registered"),
            declared_timeout=row.get("declared_timeout", DEFAULT_TASK_TIMEOUT),
            timeout_at=row.get("timeout_at"),
            result=row.get("result"),
            error=row.get("error"),
            started_at=row.get("started_at"),
            finished_at=row.get("finished_at"),
        )


@dataclass
class ParentGroup:
    group_id: str
    admin_folder: str
    goal: str
    status: str  # queued | active | done
    shared_workspace: str | None
    created_seq: int
    tasks: list[TaskNode]

    def task(self, label: str) -> TaskNode:
        for t in self.tasks:
            if t.label == label:
                return t
        raise NotFoundError(f"group {self.group_id} has no task {label!r}")

    def to_json(self) -> dict:
        return {
            "group_id": self.group_id,
            "admin_folder": self.admin_folder,
            "goal": self.goal,
            "status": self.status,
            "shared_workspace": self.shared_workspace,
            "created_seq": self.created_seq,
            "tasks": [t.to_json() for t in self.tasks],
        }

    @classmethod
    def from_json(cls, row: dict) -> "ParentGroup":
        return cls(
            group_id=row["group_id"],
            admin_folder=row["admin_folder"],
            goal=row["goal"],
            status=row["status"],
            shared_workspace=row.get("shared_workspace"),
            created_seq=row.get("created_seq", 0),
            tasks=[TaskNode.from_json(t) for t in row.get("tasks") or []],
        )


def detect_cycle(tasks: list[dict] | list[TaskNode]) -> list[str] | None:
    """Return a witness cycle (list of labels) if the graph has one, else None."""
    deps: dict[str, list[str]] = {}
    for t in tasks:
        label = t["label"] if isinstance(t, dict) else t.label
        dep = (t.get("depends_on") or []) if isinstance(t, dict) else t.depends_on
        deps[label] = list(dep)
    WHITE, GREY, BLACK = 0, 1, 2
    color = {label: WHITE for label in deps}
    stack: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GREY
        stack.append(node)
        for nxt in deps.get(node, []):
            if nxt not in deps:
                continue
            if color[nxt] == GREY:
                return stack[stack.index(nxt) :]
            if color[nxt] == WHITE:
                found = visit(nxt)
                if found:
                    return found
        stack.pop()
        color[node] = BLACK
        return None

    for label in sorted(deps):
        if color[label] == WHITE:
            witness = visit(label)
            if witness:
                return witness
    return None


def build_task_prompt(group: ParentGroup, task: TaskNode) -> str:
    """Augmented worker prompt: goal, dependency results, sibling status."""
    prereq_lines = []
    for dep_label in task.depends_on:
        dep = group.task(dep_label)
        if dep.status == "done":
            prereq_lines.append(f"- {dep.label} [done]: {dep.result or ''}")
        else:
            prereq_lines.append(f"- {dep.label} [{dep.status}]")
    other_lines = [
        f"- {t.label} [{t.status}]" for t in group.tasks if t.label != task.label
    ]
    return (
        f"<parent_goal>{group.goal}</parent_goal>\n"
        f"<prerequisites>{chr(10).join(prereq_lines)}</prerequisites>\n"
        f"<other_tasks>{chr(10).join(other_lines)}</other_tasks>\n"
        f"\n{task.prompt}"
    )


class FileLock:
    """Create-exclusive advisory lock with stale takeover.

    Stale detection compares the lock file's mtime against wall time (the
    injectable clock does not apply: mtimes are wall time by nature).
    """

    def __init__(self, path: Path | str, stale_after: float = STALE_LOCK_SECONDS):
        self.path = Path(path)
        self.stale_after = stale_after
        self._fd: int | None = None

    def acquire(self, timeout: float = 10.0) -> None:
        deadline = time.monotonic() + timeout
        while True:
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, json.dumps({"pid": os.getpid(), "at": time.time()}).encode())
                self._fd = fd
                return
            except FileExistsError:
                try:
                    age = time.time() - self.path.stat().st_mtime
                    if age > self.stale_after:
                        self.path.unlink(missing_ok=True)
                        continue
                except FileNotFoundError:
                    continue
                if time.monotonic() >= deadline:
                    raise LockContentionError(f"lock {self.path} is held by another process")
                time.sleep(0.02)

    def release(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        self.path.unlink(missing_ok=True)

    def __enter__(self) -> "FileLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


def _empty_state() -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "revision": 0,
        "next_group_seq": 1,
        "groups": [],
        "worker_assignments": {},
        "saved_workspaces": {},
    }


class StateStore:
    """The JSON state document plus its lock; every write bumps the revision."""

    def __init__(self, path: Path | str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.lock = FileLock(str(self.path) + ".lock")
        self._mutex = threading.RLock()  # in-process serialization
        self.write_hook = None  # test seam: called with the state on every save

    def _load(self) -> dict:
        if not self.path.exists():
            return _empty_state()
        state = json.loads(self.path.read_text(encoding="utf-8"))
        if state.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError(
                f"state file {self.path} has schema {state.get('schema_version')}, "
                f"expected {SCHEMA_VERSION}"
            )
        return state

    def _save(self, state: dict) -> None:
        state["revision"] = state.get("revision", 0) + 1
        if self.write_hook is not None:
            self.write_hook(state)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, indent=1), encoding="utf-8")
        tmp.replace(self.path)

    def read(self) -> dict:
        with self._mutex, self.lock:
            return self._load()

    def update(self, fn) -> object:
        """Load, mutate through fn(state), save; fn's return value passes through.

        fn may return (result, dirty) to skip the save when nothing changed.
        """
        with self._mutex, self.lock:
            state = self._load()
            out = fn(state)
            if isinstance(out, tuple) and len(out) == 2 and isinstance(out[1], bool):
                result, dirty = out
            else:
                result, dirty = out, True
            if dirty:
                self._save(state)
            return result


class DispatchBridge:
    """Drives declared task groups to completion against the state file."""

    def __init__(
        self,
        state_path: Path | str,
        registry,
        clock=None,
        worker_submit=None,
        get_admin_cwd=None,
        set_worker_cwd=None,
        touch_session=None,
    ):
        self.store = StateStore(state_path)
        self.registry = registry
        self.clock = clock or WallClock()
        self.worker_submit = worker_submit or (lambda folder, prompt, group_id, label: None)
        self._cwd: dict[str, str] = {}
        # one cwd view serves both roles: capture the admin's, save/restore workers'
        self.get_agent_cwd = get_admin_cwd or (lambda folder: self._cwd.get(folder, ""))
        self.set_worker_cwd = set_worker_cwd or self._cwd.__setitem__
        self.touch_session = touch_session or (lambda folder: None)
        self.dropped_notifications = 0

    # -- roster -------------------------------------------------------------

    def list_agents(self) -> list[tuple[str, str, str]]:
        return [(a.name, a.folder, a.channel) for a in self.registry.list()]

    def resolve_agent(self, name_or_folder: str):
        """Case-insensitive exact match against names and folder ids; no fuzz."""
        needle = (name_or_folder or "").strip().lower()
        if not needle:
            raise NotFoundError("empty agent reference")
        matches = {}
        for agent in self.registry.list():
            if agent.name.lower() == needle or agent.folder.lower() == needle:
                matches[agent.folder] = agent
        if not matches:
            raise NotFoundError(f"no agent matches {name_or_folder!r} exactly")
        if len(matches) > 1:
            raise AmbiguityError(
                f"{name_or_folder!r} matches multiple agents",
                candidates=sorted(matches),
            )
        return next(iter(matches.values()))

    # -- declaration ----------------------------------------------------------

    def create_parent(
        self,
        admin_folder: str,
        goal: str,
        tasks: list[dict],
        default_timeout: float = DEFAULT_TASK_TIMEOUT,
    ) -> tuple[str, str]:
        labels = [t.get("label") for t in tasks]
        if len(labels) != len(set(labels)):
            raise ValidationError("duplicate task labels in group declaration")
        known = set(labels)
        for t in tasks:
            for dep in t.get("depends_on") or []:
                if dep not in known:
                    raise ValidationError(
                        f"task {t['label']!r} depends on unknown label {dep!r}"
                    )
        witness = detect_cycle(tasks)
        if witness:
            raise ValidationError(f"dependency cycle: {' -> '.join(witness)}")
        nodes = []
        for t in tasks:
            agent = self.resolve_agent(t["agent_name"])
            nodes.append(
                TaskNode(
                    label=t["label"],
                    agent_name=t["agent_name"],
                    agent_folder=agent.folder,
                    prompt=t.get("prompt", ""),
                    depends_on=list(t.get("depends_on") or []),
                    declared_timeout=float(t.get("timeout", default_timeout)),
                )
            )
        admin_cwd = self.get_agent_cwd(admin_folder)

        def mutate(state):
            seq = state["next_group_seq"]
            state["next_group_seq"] = seq + 1
            has_active = any(
                g["admin_folder"] == admin_folder and g["status"] == "active"
                for g in state["groups"]
            )
            status = "queued" if has_active else "active"
            group = ParentGroup(
                group_id=f"g{seq:04d}",
                admin_folder=admin_folder,
                goal=goal,
                status=status,
                shared_workspace=admin_cwd if status == "active" else None,
                created_seq=seq,
                tasks=nodes,
            )
            state["groups"].append(group.to_json())
            return group.group_id, status

        return self.store.update(mutate)

    # -- queries ---------------------------------------------------------------

    def groups(self) -> list[ParentGroup]:
        state = self.store.read()
        return [ParentGroup.from_json(g) for g in state["groups"]]

    def find_task(self, task_id: str) -> tuple[ParentGroup, TaskNode]:
        group_id, _, label = task_id.partition(":")
        if not label:
            raise NotFoundError(f"task id {task_id!r} must look like <group>:<label>")
        for group in self.groups():
            if group.group_id == group_id:
                return group, group.task(label)
        raise NotFoundError(f"no group {group_id!r}")

    # -- the scheduler pass ------------------------------------------------------

    def tick(self, now: float | None = None) -> list[tuple]:
        """One deterministic scheduler pass: timeout scan, then dependency dispatch."""
        now = self.clock.now() if now is None else now
        actions: list[tuple] = []
        submissions: list[tuple[str, str, str, str]] = []

        def mutate(state):
            dirty = self._timeout_scan(state, now, actions)
            dirty |= self._dispatch_ready(state, now, actions, submissions)
            dirty |= self._complete_and_promote(state, now, actions)
            return actions, dirty

        self.store.update(mutate)
        self._deliver(submissions)
        return actions

    def _timeout_scan(self, state: dict, now: float, actions: list) -> bool:
        dirty = False
        for g in state["groups"]:
            for t in g["tasks"]:
                if t["status"] == "processing" and t["timeout_at"] is not None and t["timeout_at"] <= now:
                    t["status"] = "timeout"
                    t["finished_at"] = now
                    worker = t.get("agent_folder", "")
                    assignment = state["worker_assignments"].get(worker)
                    if assignment and assignment.get("label") == t["label"] and assignment.get(
                        "group_id"
                    ) == g["group_id"]:
                        state["worker_assignments"].pop(worker, None)
                    actions.append(("timeout", g["group_id"], t["label"]))
                    dirty = True
        return dirty

    def _dispatch_ready(self, state: dict, now: float, actions: list, submissions: list) -> bool:
        dirty = False
        for g in state["groups"]:
            if g["status"] != "active":
                continue
            by_label = {t["label"]: t for t in g["tasks"]}
            for t in sorted(g["tasks"], key=lambda row: row["label"]):
                if t["status"] != "registered":
                    continue
                if not all(by_label[d]["status"] in TERMINAL_STATES for d in t["depends_on"]):
                    continue
                worker = t.get("agent_folder", "")
                if worker in state["worker_assignments"]:
                    continue  # one task per worker at a time
                group_obj = ParentGroup.from_json(g)
                prompt = build_task_prompt(group_obj, group_obj.task(t["label"]))
                t["status"] = "processing"
                t["started_at"] = now
                t["timeout_at"] = now + t["declared_timeout"]
                state["worker_assignments"][worker] = {
                    "group_id": g["group_id"],
                    "label": t["label"],
                }
                if g.get("shared_workspace"):
                    saved = state["saved_workspaces"]
                    if worker not in saved:
                        saved[worker] = self.get_agent_cwd(worker) or ""
                    self.set_worker_cwd(worker, g["shared_workspace"])
                submissions.append((worker, prompt, g["group_id"], t["label"]))
                actions.append(("dispatch", g["group_id"], t["label"]))
                dirty = True
        return dirty

    def _complete_and_promote(self, state: dict, now: float, actions: list) -> bool:
        dirty = False
        finished_admins = []
        for g in state["groups"]:
            if g["status"] == "active" and g["tasks"] and all(
                t["status"] in TERMINAL_STATES for t in g["tasks"]
            ):
                g["status"] = "done"
                actions.append(("group_done", g["group_id"]))
                finished_admins.append(g["admin_folder"])
                dirty = True
            elif g["status"] == "active" and not g["tasks"]:
                g["status"] = "done"
                actions.append(("group_done", g["group_id"]))
                finished_admins.append(g["admin_folder"])
                dirty = True
        for admin in finished_admins:
            queued = [
                g
                for g in state["groups"]
                if g["admin_folder"] == admin and g["status"] == "queued"
            ]
            if queued:
                oldest = min(queued, key=lambda g: g["created_seq"])
                oldest["status"] = "active"
                oldest["shared_workspace"] = self.get_agent_cwd(admin)
                actions.append(("promote", oldest["group_id"]))
                dirty = True
        return dirty

    def _deliver(self, submissions: list[tuple[str, str, str, str]]) -> None:
        for worker, prompt, group_id, label in submissions:
            try:
                self.worker_submit(worker, prompt, group_id, label)
            except Exception as exc:
                self.notify_error(worker, f"dispatch failed: {exc}")

    # -- worker notifications -----------------------------------------------------

    def notify_reply(self, worker_folder: str, reply: str) -> None:
        self._notify(worker_folder, "done", result=reply)

    def notify_error(self, worker_folder: str, err: str) -> None:
        self._notify(worker_folder, "error", error=err)

    def _notify(self, worker_folder: str, status: str, result: str | None = None, error: str | None = None) -> None:
        now = self.clock.now()
        actions: list[tuple] = []
        submissions: list[tuple[str, str, str, str]] = []
        stale = False

        def mutate(state):
            nonlocal stale
            assignment = state["worker_assignments"].get(worker_folder)
            if not assignment:
                stale = True
                return None, False
            task = None
            for g in state["groups"]:
                if g["group_id"] == assignment["group_id"]:
                    for t in g["tasks"]:
                        if t["label"] == assignment["label"]:
                            task = t
                            break
            if task is None or task["status"] != "processing":
                stale = True
                return None, False
            task["status"] = status
            task["finished_at"] = now
            if status == "done":
                task["result"] = result
            else:
                task["error"] = error
            state["worker_assignments"].pop(worker_folder, None)
            # unblock downstream immediately, without waiting for the next tick
            self._dispatch_ready(state, now, actions, submissions)
            self._complete_and_promote(state, now, actions)
            # restore the worker's own cwd only when nothing new was assigned
            if worker_folder not in state["worker_assignments"]:
                original = state["saved_workspaces"].pop(worker_folder, None)
                if original is not None:
                    self.set_worker_cwd(worker_folder, original)
            return None, True

        self.store.update(mutate)
        if stale:
            self.dropped_notifications += 1
            return
        self._deliver(submissions)

    # -- blocking wait ---------------------------------------------------------------

    def dispatch_wait(
        self,
        task_id: str,
        poll_interval: float = POLL_INTERVAL,
        admin_folder: str | None = None,
    ) -> TaskNode:
        """Poll the state file until the task is terminal.

        While the task is registered, the declared timeout is only charged
        once the task is actually dispatchable (its group active, all its
        dependencies terminal): time spent queued behind other groups or
        waiting on upstream work does not count. Once processing starts the
        deadline re-bases to the task's own timeout_at.
        """
        dispatchable_since: float | None = None
        last_heartbeat = self.clock.now()
        while True:
            group, task = self.find_task(task_id)
            if task.terminal:
                return task
            now = self.clock.now()
            if task.status == "registered":
                by_label = {t.label: t for t in group.tasks}
                ready = group.status == "active" and all(
                    by_label[d].terminal for d in task.depends_on
                )
                if ready:
                    if dispatchable_since is None:
                        dispatchable_since = now
                    elif now > dispatchable_since + task.declared_timeout:
                        raise WaitTimeoutError(
                            f"task {task_id} stayed registered past its declared timeout"
                        )
                else:
                    dispatchable_since = None
            elif task.status == "processing" and task.timeout_at is not None:
                if now > task.timeout_at + PROCESSING_GRACE:
                    raise WaitTimeoutError(
                        f"task {task_id} ran past timeout_at with no scheduler pass"
                    )
            if admin_folder and now - last_heartbeat >= HEARTBEAT_INTERVAL:
                self.heartbeat(admin_folder)
                last_heartbeat = now
            self.clock.sleep(poll_interval)

    def heartbeat(self, admin_folder: str) -> None:
        """Refresh the admin session's activity while a wait is blocked."""
        self.touch_session(admin_folder)

    # -- recovery -----------------------------------------------------------------------

    def recover_on_startup(self) -> list[tuple[str, str]]:
        """Close out groups left active or queued by a prior run."""
        now = self.clock.now()
        report: list[tuple[str, str]] = []

        def mutate(state):
            dirty = False
            for g in state["groups"]:
                if g["status"] in ("active", "queued"):
                    g["status"] = "done"
                    report.append(("group", g["group_id"]))
                    dirty = True
                    for t in g["tasks"]:
                        if t["status"] not in TERMINAL_STATES:
                            t["status"] = "error"
                            t["error"] = "interrupted"
                            t["finished_at"] = now
                            report.append(("task", f"{g['group_id']}:{t['label']}"))
            if state["worker_assignments"]:
                state["worker_assignments"] = {}
                dirty = True
            if state["saved_workspaces"]:
                state["saved_workspaces"] = {}
                dirty = True
            return report, dirty

        return self.store.update(mutate)
