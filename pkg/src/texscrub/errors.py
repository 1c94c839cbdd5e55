"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TexScrubError(Exception):
    """Base class for all operational errors raised by texscrub."""


class BinaryInput(TexScrubError):
    """A file handed to the LaTeX parser is not text."""


class OverlappingEdits(TexScrubError):
    """Two edits passed to serialize() cover the same bytes."""


class CorruptArchive(TexScrubError):
    """An archive could not be read."""


class UnsafePath(TexScrubError):
    """An archive or directory entry resolves outside the bundle root."""


class EmptyBundle(TexScrubError):
    """The submission contains no files."""


class NoRootFound(TexScrubError):
    """No top-level LaTeX file could be identified."""


class EngineMissing(TexScrubError):
    """No usable TeX engine is configured or installed."""


class CompileFailed(TexScrubError):
    """The TeX engine exited with an error or produced no PDF."""

    def __init__(self, message: str, log: str = "") -> None:
        super().__init__(message)
        self.log = log


class CompileTimeout(CompileFailed):
    """The build exceeded its wall-clock budget."""

    def __init__(self, limit: float, elapsed: float, log: str = "") -> None:
        super().__init__(f"compile timed out after {limit:g}s (ran {elapsed:.1f}s)", log)
        self.limit = limit
        self.elapsed = elapsed


class LogOverflow(CompileFailed):
    """The TeX log grew past the configured size limit."""


class TracingUnavailable(TexScrubError):
    """File access tracing is not supported on this filesystem or engine."""


class StalePlan(TexScrubError):
    """The bundle changed after its clean plan was computed."""


class UnsupportedType(TexScrubError):
    """The metadata backend does not handle this file type."""


class BackendMissing(TexScrubError):
    """The metadata backend command could not be run."""


class RenderFailure(TexScrubError):
    """A PDF could not be rasterized."""

    def __init__(self, page: int, message: str = "") -> None:
        where = "document" if page < 0 else f"page {page}"
        super().__init__(f"{where}: {message}" if message else where)
        self.page = page


class WriteFailure(TexScrubError):
    """The sanitized bundle could not be written."""


class PluginMissing(TexScrubError):
    """A cleaner plugin's command is not installed."""


class UsageError(TexScrubError):
    """Bad command-line usage."""


class ConfigError(TexScrubError):
    """The configuration file is malformed."""
