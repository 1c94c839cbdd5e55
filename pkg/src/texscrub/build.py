"""Multi-pass compile driver and recorder (.fls) parsing."""

from __future__ import annotations

import hashlib
import posixpath
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from .engines import DEFAULT_LOG_LIMIT, DEFAULT_TIMEOUT, Engine
from .errors import CompileFailed, CompileTimeout, LogOverflow

MAX_PASSES = 3
AUX_SUFFIXES = (".aux", ".toc", ".lof", ".lot", ".out", ".nav", ".snm", ".bbl", ".idx")
_RERUN = re.compile(r"Rerun to get|Rerun LaTeX|Label\(s\) may have changed|Please rerun")
_TRIVIAL_AUX = re.compile(rb"\A(?:\s*\\relax\s*)?\Z")


@dataclass
class FlsRecord:
    pwd: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)


def parse_fls(text: str) -> FlsRecord:
    """Parse recorder output, keeping paths relative to its PWD line.

    Absolute paths outside the working directory (the TeX tree) are dropped.
    """
    pwd = ""
    rec = FlsRecord(pwd)
    for line in text.splitlines():
        kind, _, rest = line.partition(" ")
        if kind == "PWD":
            pwd = rest.rstrip("/")
            rec.pwd = pwd
            continue
        if kind not in ("INPUT", "OUTPUT") or not rest:
            continue
        rel = _relativize(rest, pwd)
        if rel is None:
            continue
        (rec.inputs if kind == "INPUT" else rec.outputs).append(rel)
    return rec


def _relativize(path: str, pwd: str) -> str | None:
    if path.startswith("/"):
        if not pwd or not path.startswith(pwd + "/"):
            return None
        path = path[len(pwd) + 1:]
    norm = posixpath.normpath(path)
    if norm.startswith("../") or norm in ("..", "."):
        return None
    return norm


@dataclass
class BuildOutcome:
    root: str
    passes: int
    inputs: set[str]
    outputs: set[str]
    accessed: set[str] | None
    pdf: bytes
    transcript: str
    elapsed: float


def _aux_state(workdir: Path) -> dict[str, str]:
    state: dict[str, str] = {}
    for p in workdir.rglob("*"):
        if p.suffix in AUX_SUFFIXES and p.is_file():
            data = p.read_bytes()
            if _TRIVIAL_AUX.match(data):
                continue
            state[p.relative_to(workdir).as_posix()] = hashlib.sha256(data).hexdigest()
    return state


def _tail(text: str, lines: int = 40) -> str:
    return "\n".join(text.splitlines()[-lines:])


def run_build(
    engine: Engine,
    workdir: Path,
    root: str,
    *,
    recorder: bool = True,
    trace: bool = False,
    max_passes: int = MAX_PASSES,
    timeout: float = DEFAULT_TIMEOUT,
    log_limit: int = DEFAULT_LOG_LIMIT,
) -> BuildOutcome:
    """Compile ``root`` inside ``workdir`` until auxiliary files settle.

    Runs at most ``max_passes`` TeX passes plus one bibliography pass when
    the engine offers one and no ``.bbl`` is present. Inputs, outputs and
    traced accesses are unioned across passes. The whole build shares one
    wall-clock budget.
    """
    workdir = Path(workdir)
    stem = posixpath.splitext(posixpath.basename(root))[0]
    pdf_path = workdir / f"{stem}.pdf"
    fls_path = workdir / f"{stem}.fls"
    engine.ready()
    start = time.monotonic()
    inputs: set[str] = set()
    outputs: set[str] = set()
    accessed: set[str] | None = set() if trace else None
    transcript = ""
    state = _aux_state(workdir)
    passes = 0
    bib_done = False
    force_next = False
    while passes < max_passes:
        remaining = timeout - (time.monotonic() - start)
        if remaining <= 0:
            raise CompileTimeout(timeout, time.monotonic() - start, _tail(transcript))
        run = engine.compile(root, workdir, recorder=recorder, trace=trace,
                             timeout=remaining, log_limit=log_limit)
        passes += 1
        transcript = run.transcript
        if run.timed_out:
            raise CompileTimeout(timeout, time.monotonic() - start, _tail(transcript))
        if run.log_overflow:
            raise LogOverflow(f"log exceeded {log_limit} bytes", _tail(transcript))
        if run.returncode != 0:
            detail = run.error or f"exit status {run.returncode}"
            raise CompileFailed(f"{root}: {detail}", _tail(transcript))
        if recorder and fls_path.exists():
            rec = parse_fls(fls_path.read_text("utf-8", "surrogateescape"))
            inputs.update(rec.inputs)
            outputs.update(rec.outputs)
        if accessed is not None and run.accessed is not None:
            accessed.update(run.accessed)
        new_state = _aux_state(workdir)
        rerun = bool(_RERUN.search(transcript)) or new_state != state or force_next
        force_next = False
        state = new_state
        if not bib_done and passes == 1:
            bib_done = True
            aux = workdir / f"{stem}.aux"
            if aux.exists() and b"\\bibdata" in aux.read_bytes() and not (workdir / f"{stem}.bbl").exists():
                remaining = timeout - (time.monotonic() - start)
                bib = engine.bibtex(stem, workdir, timeout=max(remaining, 0.0))
                if bib is not None:
                    if bib.timed_out:
                        raise CompileTimeout(timeout, time.monotonic() - start, _tail(bib.transcript))
                    rerun = force_next = True
                    state = _aux_state(workdir)
        if not rerun:
            break
    if not pdf_path.exists():
        raise CompileFailed(f"{root}: no PDF produced", _tail(transcript))
    return BuildOutcome(root, passes, inputs, outputs, accessed, pdf_path.read_bytes(), transcript,
                        time.monotonic() - start)
