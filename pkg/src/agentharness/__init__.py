"""Agent harness runtime.

Library surface: a per-session reason/act loop over pluggable model
adapters, persistent hybrid memory, a human-in-the-loop permission bridge,
DAG-based multi-agent dispatch, a four-mode scheduler, a wiki knowledge
store, and a tool/skill/hook extension surface. The daemon and CLI live in
`agentharness.gateway` and `agentharness.cli`.
"""

from .adapters import HttpAdapter, Reply, ScriptedAdapter, ToolCall
from .clock import Clock, FakeClock, WallClock
from .context import (
    AgentIdentity,
    AgentRegistry,
    PersonaBundle,
    PERSONA_HEADINGS,
    ensure_agent_dirs,
    resolve_persona,
)
from .errors import (
    AdapterError,
    AlreadyResolvedError,
    AmbiguityError,
    ConfigError,
    HarnessError,
    InvalidStateError,
    InvalidVariantError,
    LockContentionError,
    NotFoundError,
    ValidationError,
    WaitTimeoutError,
)
from .events import EventBus, RuntimeEvent
from .kernel import (
    CompactionReport,
    ContextLedger,
    Message,
    Session,
    SessionConfig,
    SessionManager,
    should_compact,
)
from .memory import (
    HashEmbedding,
    MemoryManager,
    MemoryRecord,
    RetrievalQuery,
    merge_candidates,
)
from .permbridge import Decision, PendingRequest, PermissionBridge
from .dispatch import DispatchBridge, ParentGroup, TaskNode, detect_cycle
from .extend import (
    ExtensionHost,
    HookRegistration,
    HookRegistry,
    SkillManifest,
    SkillStore,
    ToolParam,
    ToolRegistry,
    ToolSpec,
)
from .schedtask import CronSpec, ScheduledJob, TaskScheduler
from .runtime import Harness
from .tokens import count_tokens
from .wiki import WikiStore

__version__ = "0.1.0"
