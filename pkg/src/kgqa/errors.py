"""Exception types shared across the engine.

Plain ValueError is reserved for caller mistakes on in-memory calls (an
out-of-range id, a non-positive K).  The classes below cover failures tied
to external inputs and services, so callers can tell a broken file from a
broken backend from a broken configuration.
"""


class KGQAError(Exception):
    """Base class for engine errors."""


class ParseError(KGQAError):
    """A source file is malformed; the message names the offending line."""


class ConfigError(KGQAError):
    """Configuration is invalid or internally inconsistent."""


class DataError(KGQAError):
    """A dataset record violates its contract."""


class BackendError(KGQAError):
    """A backend call failed after the configured retries."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(BackendError):
    """A backend responded with a payload outside the wire contract."""


class RetrievalError(KGQAError):
    """Retrieval failed for a question; ``step`` is the failing hop if known."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class RewriteError(KGQAError):
    """Rewriting failed; ``path_index`` is the failing reasoning path."""

    def __init__(self, message: str, path_index: int | None = None):
        super().__init__(message)
        self.path_index = path_index
