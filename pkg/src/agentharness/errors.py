"""Exception types shared across the harness."""


class HarnessError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(HarnessError):
    """Input failed a declared contract (bad schema, bad graph, bad config)."""


class NotFoundError(HarnessError):
    """A named thing (agent, tool, request, task, path) does not exist."""


class AmbiguityError(HarnessError):
    """A lookup matched more than one registered entity."""

    def __init__(self, message: str, candidates: list[str] | None = None):
        super().__init__(message)
        self.candidates = candidates or []


class InvalidStateError(HarnessError):
    """Operation called against an object in the wrong lifecycle state."""


class AlreadyResolvedError(HarnessError):
    """A pending request was resolved twice; the first outcome stands."""


class InvalidVariantError(ValidationError):
    """Decision variant does not match the pending request kind."""


class WaitTimeoutError(HarnessError):
    """A blocking wait exceeded its deadline."""


class AdapterError(HarnessError):
    """The model adapter failed to produce a usable step or summary."""


class LockContentionError(HarnessError):
    """Another process holds the coordination lock."""


class ConfigError(ValidationError):
    """Deployment configuration is malformed; message carries location."""
