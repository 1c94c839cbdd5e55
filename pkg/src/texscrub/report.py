"""The machine-readable record of a clean run, and its replay."""

from __future__ import annotations

import json
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from . import __version__
from .latex_ast import Span
from .sanitizer import BblInline, CleanPlan, FileRemoval, IrrelevantSpan, MECHANISMS, stage_plan

SCHEMA_VERSION = 1


@dataclass
class SanitizationReport:
    tool_version: str = __version__
    toolchain_version: str = ""
    engine: str = ""
    origin: str = ""
    output: str | None = None
    roots: list[str] = field(default_factory=list)
    bundle_hash_before: str = ""
    bundle_hash_after: str | None = None
    classifications: dict[str, dict[str, str]] = field(default_factory=dict)
    file_removals: list[dict[str, str]] = field(default_factory=list)
    span_edits: list[dict[str, Any]] = field(default_factory=list)
    mechanism_counts: dict[str, int] = field(default_factory=lambda: dict.fromkeys(MECHANISMS, 0))
    bbl_inlines: list[dict[str, Any]] = field(default_factory=list)
    source_hashes: dict[str, str] = field(default_factory=dict)
    metadata_removed: dict[str, list[str]] = field(default_factory=dict)
    metadata_warnings: list[str] = field(default_factory=list)
    timestamps_normalized: bool = False
    epoch: int | None = None
    verification: dict[str, Any] | None = None
    findings_summary: dict[str, int] | None = None
    notes: list[str] = field(default_factory=list)
    error: str | None = None
    schema_version: int = SCHEMA_VERSION

    @property
    def verdict(self) -> str:
        if self.verification is None:
            return "breaks" if self.error else "unverified"
        return str(self.verification.get("verdict", "breaks"))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), "utf-8")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SanitizationReport:
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {version!r}")
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})

    @classmethod
    def load(cls, path: str | Path) -> SanitizationReport:
        return cls.from_dict(json.loads(Path(path).read_text("utf-8")))

    def record_plan(self, plan: CleanPlan) -> None:
        self.file_removals = [{"path": r.path, "evidence": r.evidence} for r in plan.file_removals]
        self.span_edits = [
            {
                "file": s.file, "start": s.span.start, "end": s.span.end, "line": s.span.line,
                "mechanism": s.mechanism, "replacement": s.replacement.decode("latin-1"),
            }
            for path in sorted(plan.span_edits) for s in plan.span_edits[path]
        ]
        self.mechanism_counts = plan.mechanism_counts()
        self.bbl_inlines = [
            {"root": b.root, "bbl": b.bbl, "spans": [[s.start, s.end, s.line] for s in b.spans]}
            for b in plan.bbl_inlines
        ]
        self.source_hashes = dict(plan.source_hashes)
        self.notes.extend(plan.notes)

    def plan(self) -> CleanPlan:
        """The CleanPlan this report describes."""
        edits: dict[str, list[IrrelevantSpan]] = {}
        for e in self.span_edits:
            span = Span(int(e["start"]), int(e["end"]), int(e.get("line", 1)))
            edits.setdefault(e["file"], []).append(
                IrrelevantSpan(e["file"], span, e["mechanism"], str(e["replacement"]).encode("latin-1")))
        inlines = [BblInline(b["root"], b["bbl"], tuple(Span(s[0], s[1], s[2]) for s in b["spans"]))
                   for b in self.bbl_inlines]
        removals = [FileRemoval(r["path"], r.get("evidence", "")) for r in self.file_removals]
        return CleanPlan(removals, edits, inlines, dict(self.source_hashes))

    def summary(self) -> str:
        lines = [
            f"texscrub {self.tool_version} report (schema {self.schema_version})",
            f"origin:       {self.origin}",
            f"output:       {self.output or '-'}",
            f"toolchain:    {self.toolchain_version or '-'}",
            f"roots:        {', '.join(self.roots) or '-'}",
            f"verdict:      {self.verdict}",
            f"files removed: {len(self.file_removals)}",
        ]
        for r in self.file_removals:
            lines.append(f"  - {r['path']} ({r.get('evidence', '')})")
        lines.append(f"span edits:   {len(self.span_edits)}")
        for mech in MECHANISMS:
            if self.mechanism_counts.get(mech):
                lines.append(f"  {mech}: {self.mechanism_counts[mech]}")
        if self.bbl_inlines:
            lines.append("bbl inlined:  " + ", ".join(f"{b['bbl']} -> {b['root']}" for b in self.bbl_inlines))
        if self.metadata_removed:
            lines.append(f"metadata stripped in {len(self.metadata_removed)} file(s)")
            for path, keys in sorted(self.metadata_removed.items()):
                lines.append(f"  {path}: {', '.join(keys)}")
        if self.timestamps_normalized:
            lines.append(f"timestamps set to {self.epoch}")
        if self.findings_summary is not None:
            lines.append("findings:     " + " ".join(f"{k}={v}" for k, v in self.findings_summary.items()))
        if self.verification and self.verification.get("reason"):
            lines.append(f"verification: {self.verification['reason']}")
        if self.error:
            lines.append(f"error:        {self.error}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def replay(report: SanitizationReport, bundle, metadata_backend=None) -> str:  # type: ignore[no-untyped-def]
    """Re-apply the recorded plan to the original bundle and return the content hash.

    Metadata stripping is re-run on the files the report lists.
    """
    from .bundle import from_directory
    from .metadata import strip_tree

    stage = Path(tempfile.mkdtemp(prefix="texscrub-replay-"))
    try:
        stage_plan(bundle, report.plan(), stage)
        if report.metadata_removed:
            strip_tree(stage, sorted(report.metadata_removed), metadata_backend)
        return from_directory(stage).content_hash()
    finally:
        shutil.rmtree(stage, ignore_errors=True)
