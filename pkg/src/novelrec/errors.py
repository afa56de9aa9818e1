"""Exception types shared across the package."""


class NovelrecError(Exception):
    """Base class for all package errors."""


class ParseError(NovelrecError):
    """A data file could not be parsed; carries the offending location."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" ({path}"
            if line is not None:
                where += f", line {line}"
            where += ")"
        super().__init__(message + where)


class ValidationError(NovelrecError):
    """Loaded or constructed data violates a structural invariant."""


class ClusterBuildError(NovelrecError):
    """Cluster tree construction failed (infeasible counts, bad inputs)."""


class ExportError(NovelrecError):
    """Dataset export failed, typically a dangling cluster reference."""


class GenerationError(NovelrecError):
    """Interest generation could not produce a usable output."""


class TransportError(NovelrecError):
    """Remote generation failed at the transport level after retries."""


class ProtocolError(NovelrecError):
    """Remote generation returned a response outside the wire contract."""


class ColdStartError(NovelrecError):
    """No usable history to sample a context from; caller should fall back."""


class ConsistencyError(NovelrecError):
    """Serving artifacts disagree with each other (hash or reference mismatch)."""


class ConfigError(NovelrecError):
    """Invalid configuration value."""
