"""Deployment configuration: one sectioned key=value file.

Unknown keys are rejected with their file:line location so typos surface at
startup instead of silently doing nothing. Environment variables override
file values by the AGENTHARNESS_<SECTION>_<KEY> convention.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError

ENV_PREFIX = "AGENTHARNESS"

_KNOWN_KEYS = {
    ("core", "data_root"),
    ("core", "state_file"),
    ("core", "context_limit"),
    ("core", "adapter"),
    ("core", "embedding"),
    ("core", "todos"),
    ("http", "host"),
    ("http", "port"),
    ("http", "token"),
    ("tools", "stub_external"),
}


@dataclass
class DeploymentConfig:
    data_root: Path = Path("./harness-data")
    state_file: Path | None = None
    context_limit: int = 200_000
    adapter: str = "scripted:"
    embedding: str = "none"
    todos: bool = True
    host: str = "127.0.0.1"
    port: int = 8420
    token: str = ""
    stub_external: list[str] = field(default_factory=list)

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"


def _parse_sections(text: str, origin: str) -> dict[tuple[str, str], str]:
    values: dict[tuple[str, str], str] = {}
    section = "core"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if (section, key) not in _KNOWN_KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown key [{section}] {key}")
        values[(section, key)] = value.strip()
    return values


def _apply_env(values: dict[tuple[str, str], str]) -> None:
    for section, key in _KNOWN_KEYS:
        env_name = f"{ENV_PREFIX}_{section.upper()}_{key.upper()}"
        if env_name in os.environ:
            values[(section, key)] = os.environ[env_name]


def load_config(path: Path | str | None = None) -> DeploymentConfig:
    values: dict[tuple[str, str], str] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        values = _parse_sections(path.read_text(encoding="utf-8"), str(path))
    _apply_env(values)
    config = DeploymentConfig()
    if ("core", "data_root") in values:
        config.data_root = Path(values[("core", "data_root")])
    if ("core", "state_file") in values:
        config.state_file = Path(values[("core", "state_file")])
    if ("core", "context_limit") in values:
        try:
            config.context_limit = int(values[("core", "context_limit")])
        except ValueError as exc:
            raise ConfigError(f"context_limit must be an integer: {exc}") from exc
    if ("core", "adapter") in values:
        config.adapter = values[("core", "adapter")]
    if ("core", "embedding") in values:
        config.embedding = values[("core", "embedding")]
    if ("core", "todos") in values:
        config.todos = values[("core", "todos")].lower() in ("1", "true", "yes", "on")
    if ("http", "host") in values:
        config.host = values[("http", "host")]
    if ("http", "port") in values:
        try:
            config.port = int(values[("http", "port")])
        except ValueError as exc:
            raise ConfigError(f"port must be an integer: {exc}") from exc
    if ("http", "token") in values:
        config.token = values[("http", "token")]
    if ("tools", "stub_external") in values:
        config.stub_external = [
            name.strip()
            for name in values[("tools", "stub_external")].split(",")
            if name.strip()
        ]
    return config
