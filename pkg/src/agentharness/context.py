"""Persona partitioning and injection assembly.

Each agent owns a directory tree keyed by its folder id: a stable identity
document (SOUL.md) written once at registration, an optional curated memory
index (MEMORY.md), dated conversation logs, and a wiki root. Context
injection assembles those into a three-heading bundle; the workspace part
is switchable at runtime while soul and memory namespace stay fixed.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from .errors import HarnessError, InvalidStateError, NotFoundError, ValidationError

SOUL_FILE = "SOUL.md"
MEMORY_INDEX_FILE = "MEMORY.md"
WORKSPACE_CONTEXT_FILE = "AGENTS.md"

SOUL_HEADING = "## Soul"
MEMORY_HEADING = "## Memory Index"
WORKSPACE_HEADING = "## Workspace Context"
PERSONA_HEADINGS = (SOUL_HEADING, MEMORY_HEADING, WORKSPACE_HEADING)

_FOLDER_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,63}$")

# Serializes first-time seeding per folder within the process; on-disk
# idempotence is guaranteed by exclusive-create of SOUL.md.
_folder_locks: dict[str, threading.Lock] = {}
_folder_locks_guard = threading.Lock()


def _lock_for(folder: str) -> threading.Lock:
    with _folder_locks_guard:
        return _folder_locks.setdefault(folder, threading.Lock())


@dataclass(frozen=True)
class AgentIdentity:
    folder: str
    name: str
    channel: str
    data_dir: Path
    default_workspace: Path


@dataclass(frozen=True)
class PersonaBundle:
    soul: str
    memory_index: str
    workspace_context: str

    headings = PERSONA_HEADINGS

    def render(self) -> str:
        """Serialized bundle: exactly three headings, fixed order."""
        return "\n".join(
            [
                SOUL_HEADING,
                self.soul.rstrip("\n"),
                "",
                MEMORY_HEADING,
                self.memory_index.rstrip("\n"),
                "",
                WORKSPACE_HEADING,
                self.workspace_context.rstrip("\n"),
            ]
        )


def validate_folder(folder: str) -> str:
    if not _FOLDER_RE.match(folder or "") or ".." in folder:
        raise ValidationError(
            f"agent folder {folder!r} must be a short filesystem-safe token"
        )
    return folder


def default_soul_md(identity: AgentIdentity) -> str:
    return (
        f"# {identity.name}\n"
        f"\n"
        f"- folder: {identity.folder}\n"
        f"- default workspace: {identity.default_workspace}\n"
        f"\n"
        f"Role: (describe what this agent is for; this file is yours to shape)\n"
    )


def ensure_agent_dirs(identity: AgentIdentity) -> bool:
    """Create the agent's directory tree and seed SOUL.md once.

    Returns True when anything was created, False when every path already
    existed. SOUL.md is written with exclusive create so a user-edited file
    is never touched again.
    """
    validate_folder(identity.folder)
    created = False
    with _lock_for(identity.folder):
        for path in (
            identity.data_dir,
            identity.data_dir / "memory",
            identity.data_dir / "wiki",
            identity.data_dir / "wiki" / "inbox",
            identity.data_dir / "index",
            identity.default_workspace,
        ):
            if not path.exists():
                try:
                    path.mkdir(parents=True, exist_ok=True)
                except OSError as exc:
                    raise HarnessError(f"cannot create {path}: {exc}") from exc
                created = True
        soul = identity.data_dir / SOUL_FILE
        if not soul.exists():
            try:
                with open(soul, "x", encoding="utf-8") as fh:
                    fh.write(default_soul_md(identity))
                created = True
            except FileExistsError:
                pass
            except OSError as exc:
                raise HarnessError(f"cannot write {soul}: {exc}") from exc
    return created


def resolve_persona(identity: AgentIdentity, current_workspace: Path | str) -> PersonaBundle:
    """Read-only assembly of the three-part context bundle."""
    soul_path = identity.data_dir / SOUL_FILE
    if not soul_path.exists():
        raise InvalidStateError(
            f"agent {identity.folder!r} is not seeded (missing {SOUL_FILE})"
        )
    soul = soul_path.read_text(encoding="utf-8")
    memory_path = identity.data_dir / MEMORY_INDEX_FILE
    memory_index = memory_path.read_text(encoding="utf-8") if memory_path.exists() else ""
    ws_path = Path(current_workspace) / WORKSPACE_CONTEXT_FILE
    workspace_context = ws_path.read_text(encoding="utf-8") if ws_path.exists() else ""
    return PersonaBundle(soul=soul, memory_index=memory_index, workspace_context=workspace_context)


class AgentRegistry:
    """Registered identities persisted at <root>/agents.json.

    The folder string is the namespace key for everything the agent owns:
    data dir, memory, wiki, and default workspace.
    """

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._file = self.root / "agents.json"
        self._lock = threading.Lock()

    def _load(self) -> list[dict]:
        if not self._file.exists():
            return []
        return json.loads(self._file.read_text(encoding="utf-8"))

    def _save(self, rows: list[dict]) -> None:
        tmp = self._file.with_suffix(".tmp")
        tmp.write_text(json.dumps(rows, indent=2), encoding="utf-8")
        tmp.replace(self._file)

    def _identity(self, row: dict) -> AgentIdentity:
        return AgentIdentity(
            folder=row["folder"],
            name=row["name"],
            channel=row.get("channel", "cli"),
            data_dir=Path(row["data_dir"]),
            default_workspace=Path(row["default_workspace"]),
        )

    def register(
        self,
        folder: str,
        name: str | None = None,
        channel: str = "cli",
        workspace: Path | str | None = None,
    ) -> AgentIdentity:
        validate_folder(folder)
        with self._lock:
            rows = self._load()
            for row in rows:
                if row["folder"] == folder:
                    raise ValidationError(f"agent folder {folder!r} already registered")
            identity = AgentIdentity(
                folder=folder,
                name=name or folder,
                channel=channel,
                data_dir=self.root / "agents" / folder,
                default_workspace=Path(workspace) if workspace else self.root / "workspaces" / folder,
            )
            rows.append(
                {
                    "folder": identity.folder,
                    "name": identity.name,
                    "channel": identity.channel,
                    "data_dir": str(identity.data_dir),
                    "default_workspace": str(identity.default_workspace),
                }
            )
            self._save(rows)
        ensure_agent_dirs(identity)
        return identity

    def get(self, folder: str) -> AgentIdentity:
        for row in self._load():
            if row["folder"] == folder:
                return self._identity(row)
        raise NotFoundError(f"no agent with folder {folder!r}")

    def list(self) -> list[AgentIdentity]:
        return sorted(
            (self._identity(row) for row in self._load()), key=lambda a: a.folder
        )
