"""Engine interface shared by the TeX backends."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

# 2000-01-01T00:00:00Z; used for SOURCE_DATE_EPOCH and timestamp normalization.
BUILD_EPOCH = 946684800
DEFAULT_TIMEOUT = 300.0
DEFAULT_LOG_LIMIT = 2 * 1024**3


def build_epoch() -> int:
    raw = os.environ.get("SOURCE_DATE_EPOCH")
    if raw and raw.strip().isdigit():
        return int(raw)
    return BUILD_EPOCH


@dataclass
class EngineRun:
    """Outcome of a single engine invocation."""

    returncode: int | None
    transcript: str = ""
    elapsed: float = 0.0
    timed_out: bool = False
    log_overflow: bool = False
    accessed: set[str] | None = None
    error: str | None = None
    extra: dict[str, object] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.returncode == 0 and not self.timed_out and not self.log_overflow


class Engine(Protocol):
    """A pdfLaTeX-compatible compiler.

    ``compile`` runs one pass on ``root`` (a path relative to ``cwd``) and
    leaves its outputs in ``cwd``. With ``trace=True`` the engine reports the
    bundle files it opened for reading, observed below TeX itself.
    """

    name: str
    supports_trace: bool

    def version(self) -> str: ...

    def ready(self) -> None:
        """Bring up any long-lived service so start-up is not billed to a build."""

    def compile(
        self,
        root: str,
        cwd: Path,
        *,
        recorder: bool = True,
        trace: bool = False,
        timeout: float = DEFAULT_TIMEOUT,
        log_limit: int = DEFAULT_LOG_LIMIT,
    ) -> EngineRun: ...

    def bibtex(self, stem: str, cwd: Path, *, timeout: float = DEFAULT_TIMEOUT) -> EngineRun | None: ...

    def close(self) -> None: ...
