"""Daemon: harness plus background loops plus the HTTP listener.

Startup order matters: the dispatch state is recovered before the first
tick, and a daemon lock next to the state file prevents a second process
from driving the same deployment.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from ..adapters import HttpAdapter, ScriptedAdapter
from ..clock import WallClock
from ..dispatch import FileLock, TICK_INTERVAL
from ..errors import ConfigError, LockContentionError
from ..memory import HashEmbedding
from ..runtime import Harness
from .config import DeploymentConfig
from .http import GatewayServer

REAP_INTERVAL = 30.0
SCHED_INTERVAL = 1.0


def build_adapter_factory(binding: str):
    kind, _, arg = binding.partition(":")
    if kind == "scripted":
        if arg:
            program_path = Path(arg)

            def factory(folder):
                data = json.loads(program_path.read_text(encoding="utf-8"))
                # one file may script every agent: {"agents": {folder: steps, "*": steps}}
                if isinstance(data, dict) and "agents" in data:
                    programs = data["agents"]
                    data = programs.get(folder, programs.get("*", []))
                return ScriptedAdapter.from_program(data)

            return factory
        return lambda folder: ScriptedAdapter()
    if kind == "http":
        if not arg:
            raise ConfigError("adapter = http:<endpoint-url> needs the url")
        return lambda folder: HttpAdapter(arg)
    raise ConfigError(f"unknown adapter binding {binding!r}")


def build_embedding(binding: str):
    kind, _, arg = binding.partition(":")
    if kind in ("", "none"):
        return None
    if kind == "hash":
        return HashEmbedding(dim=int(arg) if arg else 64)
    raise ConfigError(f"unknown embedding binding {binding!r}")


class Daemon:
    def __init__(self, config: DeploymentConfig, clock=None, static_dir: Path | None = None):
        self.config = config
        config.data_root.mkdir(parents=True, exist_ok=True)
        state_file = config.state_file or config.data_root / "dispatch-state.json"
        # a second daemon on the same state file must fail fast
        self._daemon_lock = FileLock(str(state_file) + ".daemon.lock", stale_after=86400.0)
        try:
            self._daemon_lock.acquire(timeout=0.2)
        except LockContentionError:
            raise LockContentionError(
                f"another daemon already serves {state_file}"
            ) from None
        self.harness = Harness(
            config.data_root,
            clock=clock or WallClock(),
            adapter_factory=build_adapter_factory(config.adapter),
            embedding=build_embedding(config.embedding),
            context_limit=config.context_limit,
            state_file=state_file,
            todos_enabled=config.todos,
        )
        for name in config.stub_external:
            self.harness.register_stub_external_tool(name)
        if static_dir is None:
            # repo layout: <root>/src/agentharness/gateway/daemon.py, <root>/frontend/dist
            bundled = Path(__file__).resolve().parents[3] / "frontend" / "dist"
            static_dir = bundled if bundled.is_dir() else None
        self.server = GatewayServer(
            self.harness, host=config.host, port=config.port, token=config.token,
            static_dir=static_dir,
        )
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def base_url(self) -> str:
        return self.server.base_url

    def _loop(self, name: str, interval: float, fn) -> None:
        def run():
            while not self._stop.wait(interval):
                try:
                    fn()
                except Exception:
                    pass

        thread = threading.Thread(target=run, daemon=True, name=name)
        thread.start()
        self._threads.append(thread)

    def start(self) -> "Daemon":
        self.harness.dispatch.recover_on_startup()
        self.server.start()
        self._loop("dispatch-tick", TICK_INTERVAL, self.harness.dispatch.tick)
        self._loop("scheduler", SCHED_INTERVAL, self.harness.scheduler.run_due)
        self._loop("session-reaper", REAP_INTERVAL, self.harness.sessions.reap_idle)
        return self

    def stop(self) -> None:
        self._stop.set()
        self.server.stop()
        for thread in self._threads:
            thread.join(timeout=2)
        self.harness.close()
        self._daemon_lock.release()

    def run_forever(self) -> None:
        self.start()
        try:
            self._stop.wait()
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
