"""Harness assembly: wires kernel, memory, bridge, dispatch, scheduler, wiki.

This is the composition root used by the daemon and by integration tests.
It owns the cross-module couplings the pieces themselves stay ignorant of:
every user prompt feeds the daily logger, every compaction marks the day's
log dirty, dispatched worker prompts run as real agent turns, and the
bundled tool set is registered as pre-authorized internal tools.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from .adapters import ScriptedAdapter
from .clock import Clock, WallClock
from .context import AgentRegistry
from .errors import NotFoundError
from .events import EventBus
from .extend import (
    EXTERNAL,
    INTERNAL,
    ExtensionHost,
    HookRegistry,
    SkillStore,
    ToolParam,
    ToolRegistry,
    ToolSpec,
)
from .kernel import Session, SessionConfig, SessionManager, utc_date
from .memory import MemoryManager, RetrievalQuery
from .permbridge import PermissionBridge
from .dispatch import DispatchBridge
from .schedtask import TaskScheduler
from .wiki import WikiStore

DEFAULT_CONTEXT_LIMIT = 200_000


class Harness:
    def __init__(
        self,
        data_root: Path | str,
        clock: Clock | None = None,
        adapter_factory=None,
        embedding=None,
        context_limit: int = DEFAULT_CONTEXT_LIMIT,
        state_file: Path | str | None = None,
        channel_sink=None,
        todos_enabled: bool = True,
    ):
        self.data_root = Path(data_root)
        self.data_root.mkdir(parents=True, exist_ok=True)
        self.clock = clock or WallClock()
        self.context_limit = context_limit
        self.adapter_factory = adapter_factory or (lambda folder: ScriptedAdapter())
        self.embedding = embedding
        self.todos_enabled = todos_enabled

        self.bus = EventBus(clock=self.clock)
        self.registry = AgentRegistry(self.data_root)
        self.tools = ToolRegistry()
        self.hooks = HookRegistry()
        self.skills = SkillStore(self.data_root / "skills")
        self.bridge = PermissionBridge(bus=self.bus, clock=self.clock)
        self.extensions = ExtensionHost(
            self.tools, self.hooks, self.bridge, self.skills, self.bus
        )
        self.sessions = SessionManager(self.clock, bridge=self.bridge)
        self._memories: dict[str, MemoryManager] = {}
        self._wikis: dict[str, WikiStore] = {}
        self._lock = threading.Lock()

        self.dispatch = DispatchBridge(
            state_file or self.data_root / "dispatch-state.json",
            registry=self.registry,
            clock=self.clock,
            worker_submit=self._submit_worker_task,
            get_admin_cwd=self._agent_cwd,
            set_worker_cwd=self._set_agent_cwd,
            touch_session=self.sessions.touch_agent,
        )
        self.scheduler = TaskScheduler(
            self.data_root / "scheduled-jobs.json",
            clock=self.clock,
            channel_sink=channel_sink or self._notify_sink,
            agent_runner=self._run_agent_prompt,
        )
        self._register_internal_tools()

    def close(self) -> None:
        for session in self.sessions.all():
            session.close()
        self.bridge.close()

    def __enter__(self) -> "Harness":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- per-agent components ----------------------------------------------

    def memory(self, folder: str) -> MemoryManager:
        with self._lock:
            if folder not in self._memories:
                identity = self.registry.get(folder)
                self._memories[folder] = MemoryManager(
                    identity.data_dir, clock=self.clock, embedding=self.embedding
                )
            return self._memories[folder]

    def wiki(self, folder: str) -> WikiStore:
        with self._lock:
            if folder not in self._wikis:
                identity = self.registry.get(folder)
                self._wikis[folder] = WikiStore(
                    identity.data_dir / "wiki",
                    clock=self.clock,
                    index_path=identity.data_dir / "index" / "wiki.db",
                )
            return self._wikis[folder]

    def session(self, folder: str) -> Session:
        existing = self.sessions.for_agent(folder)
        if existing is not None:
            return existing
        identity = self.registry.get(folder)
        config = SessionConfig(agent_id=folder, context_limit=self.context_limit)
        memory = self.memory(folder)
        session = Session(
            config=config,
            identity=identity,
            adapter=self.adapter_factory(folder),
            bus=self.bus,
            clock=self.clock,
            extensions=self.extensions,
            on_user_prompt=lambda text, ts: memory.append_daily_log(text, ts),
            on_compact=self._mark_day_dirty,
            skills=self.skills,
            todos_enabled=self.todos_enabled,
        )
        return self.sessions.add(session)

    def _mark_day_dirty(self, folder: str, ts: float) -> None:
        self.memory(folder).mark_dirty(utc_date(ts))

    # -- dispatch bindings ----------------------------------------------------

    def _agent_cwd(self, folder: str) -> str:
        session = self.sessions.for_agent(folder)
        if session is not None:
            return str(session.current_workspace)
        try:
            return str(self.registry.get(folder).default_workspace)
        except NotFoundError:
            return ""

    def _set_agent_cwd(self, folder: str, path: str) -> None:
        session = self.sessions.for_agent(folder)
        if session is None:
            session = self.session(folder)
        session.current_workspace = Path(path)

    def _submit_worker_task(self, folder: str, prompt: str, group_id: str, label: str) -> None:
        def run():
            try:
                reply, _ = self.session(folder).submit_turn(prompt)
                self.dispatch.notify_reply(folder, reply)
            except Exception as exc:
                self.dispatch.notify_error(folder, f"{type(exc).__name__}: {exc}")

        threading.Thread(target=run, daemon=True, name=f"worker-{folder}-{label}").start()

    def _run_agent_prompt(self, folder: str, prompt: str) -> str:
        reply, _ = self.session(folder).submit_turn(prompt)
        return reply

    def _notify_sink(self, message: str, channel: str) -> None:
        self.bus.emit("notify", "", {"message": message, "channel": channel})

    # -- bundled internal tools --------------------------------------------------

    def _register_internal_tools(self) -> None:
        def tool(name, description, params, handler):
            self.tools.register(
                ToolSpec(
                    name=name,
                    description=description,
                    schema=params,
                    tier=INTERNAL,
                    handler=handler,
                )
            )

        tool(
            "memory_search",
            "Search this agent's persistent memory (curated index plus daily logs).",
            [
                ToolParam("query", "string", required=True),
                ToolParam("k", "integer"),
                ToolParam("source", "string"),
            ],
            self._tool_memory_search,
        )
        tool(
            "switch_workspace",
            "Point the session's workspace context at another directory.",
            [ToolParam("path", "string", required=True)],
            lambda session, args: str(session.switch_workspace(args["path"]) and session.current_workspace),
        )
        tool(
            "todo_write",
            "Replace the session todo list used in post-compaction reminders.",
            [ToolParam("todos", "array", required=True)],
            self._tool_todo_write,
        )
        tool(
            "ask_user",
            "Ask the operator a clarifying question and wait for the answer.",
            [ToolParam("question", "string", required=True)],
            lambda session, args: self.bridge.ask_user(session, args["question"]),
        )
        tool(
            "send_message",
            "Deliver an outbound message to a channel sink.",
            [
                ToolParam("message", "string", required=True),
                ToolParam("channel", "string"),
            ],
            self._tool_send_message,
        )
        tool(
            "list_agents",
            "List registered agents: name, folder id, channel.",
            [],
            lambda session, args: json.dumps(
                [
                    {"name": n, "folder": f, "channel": c}
                    for n, f, c in self.dispatch.list_agents()
                ]
            ),
        )
        tool(
            "create_parent",
            "Declare a multi-agent task group: goal plus dependency-graph tasks.",
            [
                ToolParam("goal", "string", required=True),
                ToolParam("tasks", "array", required=True),
                ToolParam("timeout", "number"),
            ],
            self._tool_create_parent,
        )
        tool(
            "dispatch_task",
            "Block until a dispatched task reaches a terminal state.",
            [ToolParam("task_id", "string", required=True)],
            self._tool_dispatch_task,
        )
        tool(
            "task_add",
            "Register a scheduled job (notify, script, agent, or hybrid mode).",
            [
                ToolParam("mode", "string", required=True),
                ToolParam("schedule", "object", required=True),
                ToolParam("payload", "object", required=True),
            ],
            lambda session, args: self.scheduler.register_job(
                args["mode"], args["schedule"], args["payload"]
            ),
        )
        tool(
            "task_list",
            "List scheduled jobs.",
            [],
            lambda session, args: json.dumps(
                [j.to_json() for j in self.scheduler.list_jobs()]
            ),
        )
        tool(
            "task_cancel",
            "Cancel a scheduled job by id.",
            [ToolParam("job_id", "string", required=True)],
            lambda session, args: (self.scheduler.cancel_job(args["job_id"]), "cancelled")[1],
        )
        tool(
            "wiki_tree",
            "Inspect the wiki category tree.",
            [],
            lambda session, args: json.dumps(self.wiki(session.agent_folder).inspect_tree()),
        )
        tool(
            "wiki_mkdir",
            "Create a wiki category.",
            [ToolParam("path", "string", required=True)],
            lambda session, args: str(self.wiki(session.agent_folder).create_category(args["path"])),
        )
        tool(
            "wiki_save",
            "Save a knowledge entry; without a category it stages under inbox/.",
            [
                ToolParam("title", "string", required=True),
                ToolParam("body", "string", required=True),
                ToolParam("tags", "array"),
                ToolParam("category", "string"),
            ],
            lambda session, args: str(
                self.wiki(session.agent_folder).save_entry(
                    args["title"], args["body"], args.get("tags"), args.get("category")
                )
            ),
        )
        tool(
            "wiki_organize",
            "Copy a user file into a wiki category, editing only the frontmatter.",
            [
                ToolParam("source", "string", required=True),
                ToolParam("category", "string", required=True),
                ToolParam("tags", "array"),
            ],
            lambda session, args: str(
                self.wiki(session.agent_folder).organize_file(
                    args["source"], args["category"], args.get("tags")
                )
            ),
        )
        tool(
            "wiki_search",
            "Search the wiki corpus only (content query and/or tag filter).",
            [
                ToolParam("query", "string"),
                ToolParam("tags", "array"),
                ToolParam("k", "integer"),
            ],
            self._tool_wiki_search,
        )

    # -- tool handlers ---------------------------------------------------------

    def _tool_memory_search(self, session, args) -> str:
        memory = self.memory(session.agent_folder)
        memory.index_sync()
        query = RetrievalQuery(
            text=args["query"],
            k=int(args.get("k") or 10),
            source_filter=args.get("source") or "all",
        )
        records = memory.hybrid_search(query)
        if not records:
            return "no memory matches"
        lines = [
            f"{i + 1}. [{r.source}] {r.date or 'undated'} score={r.merged_score:.4f} "
            f"{Path(r.file).name}: {r.chunk[:200]}"
            for i, r in enumerate(records)
        ]
        return "\n".join(lines)

    def _tool_todo_write(self, session, args) -> str:
        session.todos = [str(t) for t in args["todos"]]
        return f"todo list replaced ({len(session.todos)} items)"

    def _tool_send_message(self, session, args) -> str:
        channel = args.get("channel") or session.identity.channel
        self.scheduler.channel_sink(args["message"], channel)
        return f"delivered to {channel}"

    def _tool_create_parent(self, session, args) -> str:
        group_id, status = self.dispatch.create_parent(
            session.agent_folder,
            args["goal"],
            args["tasks"],
            default_timeout=float(args.get("timeout") or 600.0),
        )
        return json.dumps({"group_id": group_id, "status": status})

    def _tool_wiki_search(self, session, args) -> str:
        store = self.wiki(session.agent_folder)
        store.index_sync()
        hits = store.search(
            query=args.get("query"),
            tags=args.get("tags"),
            k=int(args.get("k") or 10),
        )
        if not hits:
            return "no wiki matches"
        return "\n".join(
            f"{i + 1}. {h.path} tags={','.join(h.tags)}: {h.snippet}"
            for i, h in enumerate(hits)
        )

    def _tool_dispatch_task(self, session, args) -> str:
        node = self.dispatch.dispatch_wait(
            args["task_id"], admin_folder=session.agent_folder
        )
        return json.dumps(
            {"label": node.label, "status": node.status, "result": node.result, "error": node.error}
        )

    # -- user tools ---------------------------------------------------------------

    def register_external_tool(
        self, name: str, description: str, params: list[ToolParam], handler
    ) -> ToolSpec:
        """User-installed tools default to the external tier: consent-gated."""
        return self.tools.register(
            ToolSpec(name=name, description=description, schema=params, tier=EXTERNAL, handler=handler)
        )

    def register_stub_external_tool(self, name: str) -> ToolSpec:
        """A permission-gated stand-in tool that echoes its invocation."""
        return self.tools.register(
            ToolSpec(
                name=name,
                description=f"Stub external tool {name!r}; echoes its arguments.",
                schema=[],
                tier=EXTERNAL,
                strict=False,
                handler=lambda session, args: f"{name} executed with {json.dumps(args, sort_keys=True)}",
            )
        )
