"""A native TeX installation driven as a subprocess."""

from __future__ import annotations

import os
import shlex
import shutil
import signal
import subprocess
import tempfile
import time
from pathlib import Path

from ..errors import EngineMissing, TracingUnavailable
from .base import DEFAULT_LOG_LIMIT, DEFAULT_TIMEOUT, EngineRun, build_epoch

_POLL = 0.1


def _atime_supported(directory: Path) -> bool:
    """Probe whether reads update access times under ``directory``."""
    with tempfile.NamedTemporaryFile(dir=directory, delete=False) as fh:
        fh.write(b"probe")
        probe = Path(fh.name)
    try:
        st = probe.stat()
        os.utime(probe, ns=(0, st.st_mtime_ns))
        probe.read_bytes()
        return probe.stat().st_atime_ns > 0
    finally:
        probe.unlink(missing_ok=True)


class SubprocessEngine:
    """Runs ``pdflatex`` (or a configured command) in a fresh process per pass.

    Access tracing resets every file's atime to zero before the run and reports
    files whose atime moved, which needs a filesystem that records atimes.
    """

    name = "pdflatex"

    def __init__(self, cmd: str | list[str] = "pdflatex", bibtex_cmd: str | list[str] | None = "bibtex") -> None:
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        if not self.cmd or shutil.which(self.cmd[0]) is None:
            raise EngineMissing(f"TeX command {self.cmd[:1]} not found")
        if isinstance(bibtex_cmd, str):
            bibtex_cmd = shlex.split(bibtex_cmd)
        self.bibtex_cmd = bibtex_cmd if bibtex_cmd and shutil.which(bibtex_cmd[0]) else None
        self._version = ""
        self.supports_trace = True

    def ready(self) -> None:
        pass

    def version(self) -> str:
        if not self._version:
            try:
                out = subprocess.run(self.cmd[:1] + ["--version"], capture_output=True, text=True,
                                     timeout=30).stdout
            except (OSError, subprocess.TimeoutExpired):
                out = ""
            self._version = out.splitlines()[0] if out else self.cmd[0]
        return self._version

    def _env(self) -> dict[str, str]:
        return dict(os.environ, SOURCE_DATE_EPOCH=str(build_epoch()), FORCE_SOURCE_DATE="1", TZ="UTC")

    def _run(self, argv: list[str], cwd: Path, timeout: float, log_path: Path | None,
             log_limit: int) -> EngineRun:
        start = time.monotonic()
        proc = subprocess.Popen(argv, cwd=cwd, stdin=subprocess.DEVNULL, stdout=subprocess.PIPE,
                                stderr=subprocess.STDOUT, env=self._env(), start_new_session=True)
        chunks: list[bytes] = []
        timed_out = overflow = False
        assert proc.stdout is not None
        os.set_blocking(proc.stdout.fileno(), False)
        while True:
            try:
                data = proc.stdout.read()
            except BlockingIOError:
                data = None
            if data:
                chunks.append(data)
            if proc.poll() is not None:
                break
            elapsed = time.monotonic() - start
            if elapsed > timeout:
                timed_out = True
            elif log_path is not None and log_path.exists() and log_path.stat().st_size > log_limit:
                overflow = True
            if timed_out or overflow:
                try:
                    os.killpg(proc.pid, signal.SIGKILL)
                except ProcessLookupError:
                    pass
                proc.wait()
                break
            time.sleep(_POLL)
        try:
            rest = proc.stdout.read()
        except (BlockingIOError, ValueError):
            rest = None
        if rest:
            chunks.append(rest)
        transcript = b"".join(chunks).decode("utf-8", "replace")
        return EngineRun(None if (timed_out or overflow) else proc.returncode, transcript,
                         time.monotonic() - start, timed_out, overflow)

    def compile(self, root: str, cwd: Path, *, recorder: bool = True, trace: bool = False,
                timeout: float = DEFAULT_TIMEOUT, log_limit: int = DEFAULT_LOG_LIMIT) -> EngineRun:
        cwd = Path(cwd)
        argv = self.cmd + ["-interaction=nonstopmode", "-file-line-error"]
        if recorder:
            argv.append("-recorder")
        argv.append(root)
        before: dict[str, int] = {}
        if trace:
            if not _atime_supported(cwd):
                raise TracingUnavailable(f"{cwd}: filesystem does not update access times")
            for p in cwd.rglob("*"):
                if p.is_file():
                    st = p.stat()
                    os.utime(p, ns=(0, st.st_mtime_ns))
                    before[p.relative_to(cwd).as_posix()] = st.st_mtime_ns
        log_path = cwd / (Path(root).stem + ".log")
        run = self._run(argv, cwd, timeout, log_path, log_limit)
        if trace:
            accessed = set()
            for rel in before:
                p = cwd / rel
                if p.exists() and p.stat().st_atime_ns > 0:
                    accessed.add(rel)
            run.accessed = accessed
        return run

    def bibtex(self, stem: str, cwd: Path, *, timeout: float = DEFAULT_TIMEOUT) -> EngineRun | None:
        if self.bibtex_cmd is None:
            return None
        return self._run(self.bibtex_cmd + [stem], Path(cwd), timeout, None, DEFAULT_LOG_LIMIT)

    def close(self) -> None:
        pass
