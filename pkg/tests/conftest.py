from __future__ import annotations

import pytest

from agentharness.clock import FakeClock
from agentharness.context import AgentRegistry
from agentharness.events import EventBus
from agentharness.permbridge import PermissionBridge


@pytest.fixture(autouse=True)
def _reset_bridge_singleton():
    # PermissionBridge enforces one live instance per process; make sure a
    # failed test never leaks its slot into the next one.
    yield
    with PermissionBridge._active_lock:
        PermissionBridge._active = None


@pytest.fixture
def clock():
    return FakeClock(start=1_760_000_000.0)


@pytest.fixture
def bus(clock):
    return EventBus(clock=clock)


@pytest.fixture
def registry(tmp_path):
    return AgentRegistry(tmp_path / "data")


@pytest.fixture
def identity(registry):
    return registry.register("tester", name="Tester")


def make_identity(registry, folder, name=None):
    return registry.register(folder, name=name or folder)
