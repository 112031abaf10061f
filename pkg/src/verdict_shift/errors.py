"""Exception hierarchy shared by all pipeline stages.

Each family maps onto one CLI exit code so that scripts wrapping the tool can
tell a bad flag apart from bad data or an unreachable server.
"""

from __future__ import annotations


class VerdictShiftError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(VerdictShiftError, ValueError):
    """Invalid configuration: flags, templates, thresholds, budgets."""

    exit_code = 2


class DataError(VerdictShiftError, ValueError):
    """Input data is malformed or inconsistent."""

    exit_code = 3


class ManifestError(DataError):
    pass


class ConsistencyError(DataError):
    """Two inputs that should agree (e.g. cache and manifest) do not."""

    def __init__(self, message: str, ids: list[str] | None = None) -> None:
        super().__init__(message)
        self.ids = list(ids or [])


class EvaluatorError(VerdictShiftError):
    """Failure while obtaining a verdict from the evaluator."""

    exit_code = 4

    def __init__(
        self,
        message: str,
        sample_id: str | None = None,
        context_kind: str | None = None,
    ) -> None:
        super().__init__(message)
        self.sample_id = sample_id
        self.context_kind = context_kind

    def __str__(self) -> str:
        msg = super().__str__()
        where = []
        if self.sample_id is not None:
            where.append(f"sample={self.sample_id}")
        if self.context_kind is not None:
            where.append(f"context={self.context_kind}")
        return f"{msg} [{', '.join(where)}]" if where else msg


class TransportError(EvaluatorError):
    """Network failure or timeout that persisted through all retries."""


class ProtocolError(EvaluatorError):
    """The server answered, but not with a parseable completion."""
