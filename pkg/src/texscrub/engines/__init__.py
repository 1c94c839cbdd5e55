"""TeX engine backends and selection."""

from __future__ import annotations

import queue
import shutil
from collections.abc import Callable, Iterator
from contextlib import contextmanager

from ..errors import EngineMissing
from .base import BUILD_EPOCH, DEFAULT_LOG_LIMIT, DEFAULT_TIMEOUT, Engine, EngineRun, build_epoch
from .node import NodePdftexEngine, locate_texlive_js
from .subproc import SubprocessEngine

__all__ = [
    "BUILD_EPOCH", "DEFAULT_LOG_LIMIT", "DEFAULT_TIMEOUT", "Engine", "EnginePool", "EngineRun",
    "NodePdftexEngine", "SubprocessEngine", "build_epoch", "locate_texlive_js", "select_engine",
]


def select_engine(
    kind: str = "auto",
    engine_cmd: str | None = None,
    bibtex_cmd: str | None = None,
    texlive_js: str | None = None,
) -> Engine:
    """Pick a TeX backend.

    An explicit ``engine_cmd`` always means a subprocess engine. ``auto``
    prefers a native ``pdflatex`` and falls back to texlive.js.
    """
    if engine_cmd:
        return SubprocessEngine(engine_cmd, bibtex_cmd or "bibtex")
    if kind in ("pdflatex", "native"):
        return SubprocessEngine("pdflatex", bibtex_cmd or "bibtex")
    if kind in ("texlive.js", "texlivejs", "node"):
        return NodePdftexEngine(texlive_js)
    if kind != "auto":
        raise EngineMissing(f"unknown engine kind {kind!r}")
    if shutil.which("pdflatex"):
        return SubprocessEngine("pdflatex", bibtex_cmd or "bibtex")
    return NodePdftexEngine(texlive_js)


class EnginePool:
    """A fixed set of engines handed out one at a time (for ``--jobs``)."""

    def __init__(self, factory: Callable[[], Engine], size: int = 1) -> None:
        self._all = [factory() for _ in range(max(1, size))]
        self._free: queue.Queue[Engine] = queue.Queue()
        for eng in self._all:
            self._free.put(eng)

    @property
    def size(self) -> int:
        return len(self._all)

    @contextmanager
    def acquire(self) -> Iterator[Engine]:
        eng = self._free.get()
        try:
            yield eng
        finally:
            self._free.put(eng)

    def close(self) -> None:
        for eng in self._all:
            eng.close()
