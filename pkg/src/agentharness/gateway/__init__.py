"""Operator surface: deployment config, HTTP API, daemon loops."""

from .config import DeploymentConfig, load_config
from .daemon import Daemon

__all__ = ["DeploymentConfig", "load_config", "Daemon"]
