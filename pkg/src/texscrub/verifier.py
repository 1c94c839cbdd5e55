"""Pixel-level comparison of compiled PDFs and clean verdicts."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
import threading
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import RenderFailure

DEFAULT_DPI = 150
MIN_DPI, MAX_DPI = 72, 600
_PDFIUM_LOCK = threading.Lock()


@dataclass
class PageMismatch:
    page: int
    pixels: int
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 (exclusive)

    def as_tuple(self) -> tuple[int, int, tuple[int, int, int, int]]:
        return self.page, self.pixels, self.bbox


@dataclass
class VisualDiff:
    page_count_match: bool
    mismatched_pages: list[PageMismatch] = field(default_factory=list)
    dpi: int = DEFAULT_DPI
    verdict: str = "identical"  # identical | different | incomparable
    reason: str = ""

    def to_dict(self) -> dict[str, object]:
        return {
            "page_count_match": self.page_count_match,
            "mismatched_pages": [
                {"page": m.page, "pixels": m.pixels, "bbox": list(m.bbox)} for m in self.mismatched_pages
            ],
            "dpi": self.dpi,
            "verdict": self.verdict,
            "reason": self.reason,
        }


@dataclass
class CleanOutcome:
    changed_sources: bool
    compiles_after: bool
    visual: VisualDiff | None
    verdict: str  # beneficial | neutral | breaks | unverified
    reason: str = ""

    def to_dict(self) -> dict[str, object]:
        return {
            "changed_sources": self.changed_sources,
            "compiles_after": self.compiles_after,
            "visual": self.visual.to_dict() if self.visual else None,
            "verdict": self.verdict,
            "reason": self.reason,
        }


def _check_dpi(dpi: int) -> int:
    if not MIN_DPI <= int(dpi) <= MAX_DPI:
        raise ValueError(f"dpi must lie in [{MIN_DPI}, {MAX_DPI}], got {dpi}")
    return int(dpi)


def rasterize(pdf: bytes, dpi: int = DEFAULT_DPI) -> list[np.ndarray]:
    """One RGB uint8 array per page, rendered with pdfium."""
    import pypdfium2 as pdfium

    dpi = _check_dpi(dpi)
    with _PDFIUM_LOCK:
        try:
            doc = pdfium.PdfDocument(pdf)
        except pdfium.PdfiumError as exc:
            raise RenderFailure(-1, str(exc)) from exc
        try:
            pages = []
            for i in range(len(doc)):
                try:
                    page = doc[i]
                    bitmap = page.render(scale=dpi / 72, may_draw_forms=False)
                    pages.append(bitmap.to_numpy().copy())
                except pdfium.PdfiumError as exc:
                    raise RenderFailure(i, str(exc)) from exc
            return pages
        finally:
            doc.close()


class CommandRasterizer:
    """External renderer: ``cmd PDF DPI OUTDIR`` writes page images to OUTDIR.

    Pages are read back in name order; any format Pillow can open works
    (PPM/PNG are typical).
    """

    def __init__(self, cmd: str | list[str], timeout: float = 300.0) -> None:
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        self.timeout = timeout

    def __call__(self, pdf: bytes, dpi: int = DEFAULT_DPI) -> list[np.ndarray]:
        from PIL import Image

        dpi = _check_dpi(dpi)
        with tempfile.TemporaryDirectory(prefix="texscrub-raster-") as tmp:
            src = Path(tmp) / "in.pdf"
            src.write_bytes(pdf)
            out = Path(tmp) / "pages"
            out.mkdir()
            proc = subprocess.run(self.cmd + [str(src), str(dpi), str(out)], capture_output=True,
                                  timeout=self.timeout)
            if proc.returncode != 0:
                raise RenderFailure(-1, proc.stderr.decode("utf-8", "replace").strip())
            pages = []
            for p in sorted(out.iterdir()):
                with Image.open(p) as im:
                    pages.append(np.asarray(im.convert("RGB")).copy())
            return pages


def page_diff(a: np.ndarray, b: np.ndarray) -> tuple[int, tuple[int, int, int, int] | None]:
    """Differing pixel count and bounding box for two page buffers."""
    if a.shape != b.shape:
        h = max(a.shape[0], b.shape[0])
        w = max(a.shape[1], b.shape[1])
        return h * w, (0, 0, w, h)
    mask = a != b
    if mask.ndim == 3:
        mask = mask.any(axis=2)
    count = int(mask.sum())
    if count == 0:
        return 0, None
    ys = np.flatnonzero(mask.any(axis=1))
    xs = np.flatnonzero(mask.any(axis=0))
    return count, (int(xs[0]), int(ys[0]), int(xs[-1]) + 1, int(ys[-1]) + 1)


def compare(pdf_a: bytes, pdf_b: bytes, dpi: int = DEFAULT_DPI, *, fuzz: int = 0,
            rasterizer=None) -> VisualDiff:  # type: ignore[no-untyped-def]
    """Exact page-by-page comparison; ``fuzz`` tolerates that many pixels per page."""
    render = rasterizer or rasterize
    try:
        pages_a = render(pdf_a, dpi)
        pages_b = render(pdf_b, dpi)
    except RenderFailure as exc:
        return VisualDiff(False, [], dpi, "incomparable", f"render failure: {exc}")
    diff = VisualDiff(len(pages_a) == len(pages_b), [], dpi)
    for i, (a, b) in enumerate(zip(pages_a, pages_b)):
        count, bbox = page_diff(a, b)
        if count > fuzz and bbox is not None:
            diff.mismatched_pages.append(PageMismatch(i, count, bbox))
    if not diff.page_count_match:
        diff.verdict = "different"
        diff.reason = f"page count {len(pages_a)} != {len(pages_b)}"
    elif diff.mismatched_pages:
        diff.verdict = "different"
        diff.reason = f"{len(diff.mismatched_pages)} page(s) differ"
    return diff


def combine(diffs: Mapping[str, VisualDiff], dpi: int = DEFAULT_DPI) -> VisualDiff:
    """Merge per-root diffs; any non-identical root decides the verdict."""
    out = VisualDiff(all(d.page_count_match for d in diffs.values()), [], dpi)
    reasons = []
    for root, d in sorted(diffs.items()):
        out.mismatched_pages.extend(d.mismatched_pages)
        if d.verdict != "identical":
            reasons.append(f"{root}: {d.reason}")
            if out.verdict != "incomparable":
                out.verdict = d.verdict
    out.reason = "; ".join(reasons)
    return out


def outcome(changed_sources: bool, compiles_after: bool, visual: VisualDiff | None,
            *, tool_failed: bool = False, reason: str = "") -> CleanOutcome:
    """Apply the verdict rules."""
    if tool_failed:
        return CleanOutcome(changed_sources, compiles_after, visual, "breaks", reason or "tool failure")
    if not compiles_after:
        return CleanOutcome(changed_sources, False, visual, "breaks", reason or "sanitized bundle does not compile")
    if visual is None:
        return CleanOutcome(changed_sources, True, None, "unverified", reason or "verification skipped")
    if visual.verdict != "identical":
        return CleanOutcome(changed_sources, True, visual, "breaks", reason or visual.reason or visual.verdict)
    if not changed_sources:
        return CleanOutcome(False, True, visual, "neutral", reason)
    return CleanOutcome(True, True, visual, "beneficial", reason)


def judge(original, sanitized, engine, *, roots=None, dpi: int = DEFAULT_DPI, fuzz: int = 0,  # type: ignore[no-untyped-def]
          timeout: float | None = None, rasterizer=None, original_pdfs: Mapping[str, bytes] | None = None
          ) -> CleanOutcome:
    """Compile both bundles and decide beneficial / neutral / breaks.

    Any exception while judging is a ``breaks`` verdict.
    """
    from .bundle import detect_roots
    from .dangling import compile_with_recorder
    from .engines import DEFAULT_TIMEOUT
    from .errors import TexScrubError

    limit = DEFAULT_TIMEOUT if timeout is None else timeout
    try:
        changed = original.content_hash() != sanitized.content_hash()
        root_list = list(roots) if roots is not None else detect_roots(original)
        before: dict[str, bytes] = dict(original_pdfs or {})
        for root in root_list:
            if root not in before:
                before[root] = compile_with_recorder(original, root, engine, timeout=limit).pdf
    except (TexScrubError, OSError) as exc:
        return CleanOutcome(False, False, None, "breaks", f"original not comparable: {exc}")
    after: dict[str, bytes] = {}
    try:
        for root in root_list:
            if root not in sanitized.files:
                return outcome(changed, False, None, reason=f"root {root} missing after cleaning")
            after[root] = compile_with_recorder(sanitized, root, engine, timeout=limit).pdf
    except (TexScrubError, OSError) as exc:
        return outcome(changed, False, None, reason=f"sanitized bundle does not compile: {exc}")
    try:
        diffs = {r: compare(before[r], after[r], dpi, fuzz=fuzz, rasterizer=rasterizer) for r in root_list}
    except Exception as exc:  # noqa: BLE001 - fail closed
        return outcome(changed, True, None, tool_failed=True, reason=f"comparison failed: {exc}")
    return outcome(changed, True, combine(diffs, dpi))
