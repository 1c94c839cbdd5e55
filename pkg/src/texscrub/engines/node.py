"""pdfTeX compiled to JavaScript (texlive.js), driven through a node service."""

from __future__ import annotations

import json
import os
import queue
import shutil
import signal
import subprocess
import threading
import time
from importlib import resources
from pathlib import Path

from ..errors import EngineMissing
from .base import DEFAULT_LOG_LIMIT, DEFAULT_TIMEOUT, EngineRun, build_epoch

ENV_VAR = "TEXSCRUB_TEXLIVE_JS"
_DEFAULT_LOCATIONS = (
    Path.home() / ".cache" / "texscrub" / "node_modules" / "texlive",
    Path("/usr/local/lib/node_modules/texlive"),
    Path("/usr/lib/node_modules/texlive"),
)
_STARTUP_TIMEOUT = 120.0


def locate_texlive_js(explicit: str | os.PathLike[str] | None = None) -> Path | None:
    """Find an installed texlive.js package directory."""
    candidates: list[Path] = []
    if explicit:
        candidates.append(Path(explicit))
    if os.environ.get(ENV_VAR):
        candidates.append(Path(os.environ[ENV_VAR]))
    candidates.extend(_DEFAULT_LOCATIONS)
    for cand in candidates:
        if (cand / "pdftex-worker.js").is_file() and (cand / "texlive").is_dir():
            return cand
    return None


def server_script() -> Path:
    return Path(str(resources.files("texscrub.engines").joinpath("pdftex_server.js")))


class NodePdftexEngine:
    """Keeps one node process alive and sends it one compile at a time.

    Every request gets a fresh JavaScript context, so compiles do not share
    TeX state. A request that exceeds its timeout kills the process; the next
    request starts a new one.
    """

    name = "texlive.js"
    supports_trace = True

    def __init__(self, package_dir: str | os.PathLike[str] | None = None, node: str = "node",
                 memory: int = 256 * 1024 * 1024) -> None:
        found = locate_texlive_js(package_dir)
        if found is None:
            raise EngineMissing(
                "texlive.js not found; install it with "
                "`npm install --prefix ~/.cache/texscrub texlive` or set " + ENV_VAR
            )
        node_path = shutil.which(node)
        if node_path is None:
            raise EngineMissing(f"node executable {node!r} not found")
        self.package_dir = found
        self.node = node_path
        self.memory = memory
        self._proc: subprocess.Popen[str] | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._version = ""
        self._lock = threading.Lock()
        self._counter = 0

    def version(self) -> str:
        if not self._version:
            with self._lock:
                self._ensure()
        return self._version

    def ready(self) -> None:
        with self._lock:
            self._ensure()

    def _ensure(self) -> subprocess.Popen[str]:
        if self._proc is not None and self._proc.poll() is None:
            return self._proc
        env = dict(os.environ, TZ="UTC")
        self._proc = subprocess.Popen(
            [self.node, "--max-old-space-size=4096", str(server_script()), str(self.package_dir)],
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
            text=True, env=env, start_new_session=True, bufsize=1,
        )
        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc, self._lines), daemon=True).start()
        hello = self._read(_STARTUP_TIMEOUT)
        if hello is None:
            self._kill()
            raise EngineMissing("texlive.js service failed to start")
        self._version = json.loads(hello).get("version", "texlive.js")
        return self._proc

    @staticmethod
    def _pump(proc: subprocess.Popen[str], lines: queue.Queue[str | None]) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def _read(self, timeout: float) -> str | None:
        try:
            return self._lines.get(timeout=max(timeout, 0.01))
        except queue.Empty:
            return None

    def _kill(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            pass
        proc.wait()

    def compile(self, root: str, cwd: Path, *, recorder: bool = True, trace: bool = False,
                timeout: float = DEFAULT_TIMEOUT, log_limit: int = DEFAULT_LOG_LIMIT) -> EngineRun:
        args = ["-interaction=nonstopmode", "-output-format", "pdf"]
        if recorder:
            args.insert(0, "-recorder")
        args.append(root)
        with self._lock:
            proc = self._ensure()
            self._counter += 1
            req = {"id": self._counter, "cwd": str(Path(cwd).resolve()), "args": args,
                   "trace": trace, "log_limit": log_limit, "epoch": build_epoch(),
                   "memory": self.memory}
            start = time.monotonic()
            assert proc.stdin is not None
            try:
                proc.stdin.write(json.dumps(req) + "\n")
                proc.stdin.flush()
            except BrokenPipeError:
                self._kill()
                return EngineRun(None, error="texlive.js service died")
            while True:
                remaining = timeout - (time.monotonic() - start)
                line = self._read(remaining) if remaining > 0 else None
                if line is None:
                    elapsed = time.monotonic() - start
                    self._kill()
                    if elapsed >= timeout - 0.05:
                        return EngineRun(None, elapsed=elapsed, timed_out=True)
                    return EngineRun(None, elapsed=elapsed, error="texlive.js service died")
                reply = json.loads(line)
                if reply.get("id") == self._counter:
                    break
        elapsed = time.monotonic() - start
        accessed = set(reply["accessed"]) if reply.get("accessed") is not None else None
        return EngineRun(
            reply.get("status"), transcript=reply.get("transcript", ""), elapsed=elapsed,
            log_overflow=bool(reply.get("log_overflow")), accessed=accessed,
            error=reply.get("error"),
        )

    def bibtex(self, stem: str, cwd: Path, *, timeout: float = DEFAULT_TIMEOUT) -> EngineRun | None:
        return None

    def close(self) -> None:
        with self._lock:
            if self._proc is not None and self._proc.stdin is not None:
                try:
                    self._proc.stdin.close()
                except OSError:
                    pass
            self._kill()

    def __del__(self) -> None:
        try:
            self._kill()
        except Exception:
            pass
