"""End-to-end clean: classify, rewrite, strip, verify, publish."""

from __future__ import annotations

import logging
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .bundle import SubmissionBundle, detect_roots, from_directory
from .dangling import BuildRecord, Classification, classify, compile_with_recorder
from .engines import BUILD_EPOCH, DEFAULT_LOG_LIMIT, DEFAULT_TIMEOUT, Engine
from .errors import CompileFailed, NoRootFound, TexScrubError, WriteFailure
from .metadata import MetadataBackend, is_payload, normalize_timestamps, strip_tree
from .output import is_inside, make_stage, publish
from .report import SanitizationReport
from .sanitizer import CleanPlan, make_plan, plan_content, stage_plan
from .verifier import DEFAULT_DPI, CleanOutcome, judge

log = logging.getLogger(__name__)


@dataclass
class CleanOptions:
    keep_comments: bool = False
    keep_dangling: bool = False
    keep_metadata: bool = False
    strip_times: bool = False
    verify: bool = True
    root: str | None = None
    timeout: float = DEFAULT_TIMEOUT
    log_limit: int = DEFAULT_LOG_LIMIT
    dpi: int = DEFAULT_DPI
    fuzz: int = 0
    epoch: int = BUILD_EPOCH
    overwrite: bool = False
    rasterizer: object | None = None
    metadata_backend: MetadataBackend | None = None


@dataclass
class CleanResult:
    report: SanitizationReport
    output: Path | None
    outcome: CleanOutcome
    plan: CleanPlan | None = None
    classifications: dict[str, Classification] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return self.outcome.verdict


def _records(bundle: SubmissionBundle, roots: list[str], engine: Engine, opts: CleanOptions) -> dict[str, BuildRecord]:
    return {r: compile_with_recorder(bundle, r, engine, timeout=opts.timeout, log_limit=opts.log_limit)
            for r in roots}


def _failed(report: SanitizationReport, reason: str) -> CleanResult:
    report.error = reason
    outcome = CleanOutcome(False, False, None, "breaks", reason)
    report.verification = outcome.to_dict()
    return CleanResult(report, None, outcome)


def clean_bundle(bundle: SubmissionBundle, out: str | Path | None, engine: Engine,
                 options: CleanOptions | None = None) -> CleanResult:
    """Sanitize ``bundle`` into ``out``.

    Fail-closed: when the original cannot be compiled (error, timeout, log
    overflow) or the result does not verify, nothing is written and the
    verdict is ``breaks``. ``out=None`` runs everything but publication.
    """
    opts = options or CleanOptions()
    out_path = Path(out) if out is not None else None
    report = SanitizationReport(toolchain_version=engine.version(), engine=engine.name, origin=bundle.origin,
                                bundle_hash_before=bundle.content_hash())
    report.notes.extend(bundle.warnings)
    if bundle.directive_paths("ignore"):
        report.notes.append("00README ignore entries were excluded from compilation and treated as dangling")
    if out_path is not None and (is_inside(out_path, bundle.root_dir) or is_inside(bundle.root_dir, out_path)):
        return _failed(report, f"output {out_path} overlaps the input bundle")
    try:
        roots = detect_roots(bundle, opts.root)
    except NoRootFound as exc:
        return _failed(report, str(exc))
    report.roots = roots
    try:
        records = _records(bundle, roots, engine, opts)
    except CompileFailed as exc:
        return _failed(report, f"original does not compile: {exc}")
    classes = classify(bundle, records)

    stage = make_stage(out_path) if out_path is not None else Path(tempfile.mkdtemp(prefix="texscrub-stage-"))
    try:
        content = None
        if not opts.keep_comments:
            required_tex = [p for p, c in classes.items() if c.verdict == "required"]
            content = plan_content(bundle, required_tex, roots)
        plan = make_plan(bundle, classes, roots, content, keep_dangling=True)
        if plan.bbl_inlines:
            # Inlining can leave the bbl (and anything only it pulled in) unread.
            probe = Path(tempfile.mkdtemp(prefix="texscrub-probe-"))
            try:
                stage_plan(bundle, plan, probe)
                probe_bundle = from_directory(probe)
                probe_bundle.readme = bundle.readme
                after = _records(probe_bundle, roots, engine, opts)
                classes = classify(bundle, _rebase(after, bundle))
            except CompileFailed as exc:
                shutil.rmtree(stage, ignore_errors=True)
                return _failed(report, f"bibliography inlining broke the build: {exc}")
            finally:
                shutil.rmtree(probe, ignore_errors=True)
        plan = make_plan(bundle, classes, roots, content, keep_dangling=opts.keep_dangling)
        report.classifications = {p: {"verdict": c.verdict, "evidence": c.evidence} for p, c in classes.items()}
        report.record_plan(plan)
        stage_plan(bundle, plan, stage)
        if not opts.keep_metadata:
            payload = [p for p in bundle.paths()
                       if is_payload(p) and (stage / p).exists() and classes[p].verdict != "directive"]
            for res in strip_tree(stage, payload, opts.metadata_backend):
                if res.removed:
                    report.metadata_removed[res.path] = res.removed
                if res.warning:
                    report.metadata_warnings.append(f"{res.path}: {res.warning}")
        if opts.strip_times:
            normalize_timestamps(stage, opts.epoch)
            report.timestamps_normalized = True
            report.epoch = opts.epoch
        cleaned = from_directory(stage)
        report.bundle_hash_after = cleaned.content_hash()
        if opts.verify:
            outcome = judge(bundle, cleaned, engine, roots=roots, dpi=opts.dpi, fuzz=opts.fuzz,
                            timeout=opts.timeout, rasterizer=opts.rasterizer,
                            original_pdfs={r: rec.pdf for r, rec in records.items()})
        else:
            changed = report.bundle_hash_after != report.bundle_hash_before
            outcome = CleanOutcome(changed, True, None, "unverified", "verification skipped")
        report.verification = outcome.to_dict()
        if outcome.verdict == "breaks":
            shutil.rmtree(stage, ignore_errors=True)
            report.error = f"verification failed: {outcome.reason}"
            return CleanResult(report, None, outcome, plan, classes)
        published = None
        if out_path is not None:
            mtime = opts.epoch if opts.strip_times else None
            published = publish(stage, out_path, mtime=mtime, overwrite=opts.overwrite)
            report.output = str(published)
        else:
            shutil.rmtree(stage, ignore_errors=True)
        return CleanResult(report, published, outcome, plan, classes)
    except (TexScrubError, OSError) as exc:
        shutil.rmtree(stage, ignore_errors=True)
        if isinstance(exc, WriteFailure):
            return _failed(report, str(exc))
        log.debug("clean failed", exc_info=True)
        return _failed(report, f"{type(exc).__name__}: {exc}")


def _rebase(records: dict[str, BuildRecord], bundle: SubmissionBundle) -> dict[str, BuildRecord]:
    present = set(bundle.files)
    return {r: BuildRecord(rec.root, frozenset(p for p in rec.inputs if p in present),
                           frozenset(p for p in rec.outputs if p in present), rec.passes, rec.engine_version)
            for r, rec in records.items()}
