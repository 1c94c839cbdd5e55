"""Dangling-file detection.

A file is required when TeX reads it while building a root document. The
primary evidence is the engine's recorder (``-recorder`` / ``.fls``); an
independent access trace observed below TeX serves as a cross-check.
"""

from __future__ import annotations

import shutil
import tempfile
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .build import MAX_PASSES, BuildOutcome, run_build
from .bundle import SubmissionBundle
from .engines import DEFAULT_LOG_LIMIT, DEFAULT_TIMEOUT, Engine
from .errors import TracingUnavailable

VERDICTS = ("required", "dangling", "ancillary", "directive")
EVIDENCE = ("recorder", "access_trace", "readme", "anc_rule", "root_rule")


@dataclass
class BuildRecord:
    """Bundle files read and written while compiling one root."""

    root: str
    inputs: frozenset[str]
    outputs: frozenset[str]
    passes: int
    engine_version: str
    pdf: bytes = field(default=b"", repr=False, compare=False)
    transcript: str = field(default="", repr=False, compare=False)


@dataclass(frozen=True)
class Classification:
    path: str
    verdict: str
    evidence: str


def _scratch_copy(bundle: SubmissionBundle) -> Path:
    scratch = Path(tempfile.mkdtemp(prefix="texscrub-build-"))
    bundle.copy_to(scratch, exclude=bundle.directive_paths("ignore"))
    return scratch


def _build(
    bundle: SubmissionBundle, root: str, engine: Engine, *, recorder: bool, trace: bool,
    timeout: float, max_passes: int, log_limit: int,
) -> BuildOutcome:
    scratch = _scratch_copy(bundle)
    try:
        return run_build(engine, scratch, root, recorder=recorder, trace=trace,
                         max_passes=max_passes, timeout=timeout, log_limit=log_limit)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def compile_with_recorder(
    bundle: SubmissionBundle,
    root: str,
    engine: Engine,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    max_passes: int = MAX_PASSES,
    log_limit: int = DEFAULT_LOG_LIMIT,
) -> BuildRecord:
    """Compile ``root`` in a scratch copy and record the bundle files it touched.

    Files named ``ignore`` in a 00README are left out of the scratch copy.
    Raises CompileFailed, CompileTimeout or LogOverflow; there is no partial
    record on failure.
    """
    out = _build(bundle, root, engine, recorder=True, trace=False, timeout=timeout,
                 max_passes=max_passes, log_limit=log_limit)
    present = set(bundle.files)
    return BuildRecord(
        root=root,
        inputs=frozenset(p for p in out.inputs if p in present),
        outputs=frozenset(p for p in out.outputs if p in present),
        passes=out.passes,
        engine_version=engine.version(),
        pdf=out.pdf,
        transcript=out.transcript,
    )


def trace_file_accesses(
    bundle: SubmissionBundle,
    root: str,
    engine: Engine,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    max_passes: int = MAX_PASSES,
    log_limit: int = DEFAULT_LOG_LIMIT,
) -> set[str]:
    """Bundle files opened for reading during a clean-scratch build.

    The build runs without the recorder; the engine observes file opens (or
    access times) on its own.
    """
    if not getattr(engine, "supports_trace", False):
        raise TracingUnavailable(f"{engine.name} cannot trace file accesses")
    out = _build(bundle, root, engine, recorder=False, trace=True, timeout=timeout,
                 max_passes=max_passes, log_limit=log_limit)
    assert out.accessed is not None
    return {p for p in out.accessed if p in bundle.files}


def compile_instrumented(
    bundle: SubmissionBundle,
    root: str,
    engine: Engine,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    max_passes: int = MAX_PASSES,
    log_limit: int = DEFAULT_LOG_LIMIT,
) -> tuple[BuildRecord, set[str]]:
    """One build observed by both the recorder and the access trace.

    The two observations come from different layers (TeX's own bookkeeping
    and the filesystem below it), so agreement is still meaningful; this
    halves the cost of large randomized checks.
    """
    out = _build(bundle, root, engine, recorder=True, trace=True, timeout=timeout,
                 max_passes=max_passes, log_limit=log_limit)
    present = set(bundle.files)
    record = BuildRecord(root, frozenset(p for p in out.inputs if p in present),
                         frozenset(p for p in out.outputs if p in present), out.passes,
                         engine.version(), out.pdf, out.transcript)
    return record, {p for p in (out.accessed or ()) if p in present}


def classify_required(
    bundle: SubmissionBundle,
    required: Iterable[str],
    roots: Iterable[str],
    evidence: str = "recorder",
) -> dict[str, Classification]:
    """Assign a verdict to every bundle file given the set of files read."""
    required = set(required)
    roots = set(roots)
    readme_files = set(bundle.readme_files())
    anc = set(bundle.anc_paths())
    readme_included = set(bundle.directive_paths("include"))
    readme_ignored = set(bundle.directive_paths("ignore"))
    out: dict[str, Classification] = {}
    for path in bundle.paths():
        if path in readme_files:
            c = Classification(path, "directive", "readme")
        elif path in anc:
            c = Classification(path, "ancillary", "anc_rule")
        elif path in roots:
            c = Classification(path, "required", "root_rule")
        elif path in readme_included:
            c = Classification(path, "required", "readme")
        elif path in required:
            c = Classification(path, "required", evidence)
        elif path in readme_ignored:
            c = Classification(path, "dangling", "readme")
        else:
            c = Classification(path, "dangling", evidence)
        out[path] = c
    return out


def classify(bundle: SubmissionBundle, records: Mapping[str, BuildRecord] | Iterable[BuildRecord]) -> dict[str, Classification]:
    """Verdicts from recorder evidence over every root's build."""
    recs = list(records.values()) if isinstance(records, Mapping) else list(records)
    required: set[str] = set()
    for rec in recs:
        required |= rec.inputs
    return classify_required(bundle, required, [r.root for r in recs])


def dangling_paths(classes: Mapping[str, Classification]) -> set[str]:
    return {p for p, c in classes.items() if c.verdict == "dangling"}
