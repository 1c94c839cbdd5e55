"""Evaluation harness: cleaner plugins, the nine-case MWE suite, corpus scoring."""

from __future__ import annotations

import json
import os
import shlex
import shutil
import stat
import subprocess
import sys
import tempfile
import time
from collections import Counter
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .bundle import SubmissionBundle, detect_roots, from_directory, ingest
from .dangling import Classification, classify, compile_with_recorder
from .engines import DEFAULT_TIMEOUT, Engine, EnginePool
from .errors import CompileFailed, PluginMissing, TexScrubError
from .verifier import CleanOutcome, judge

TEST_IDS = tuple(range(1, 10))
TEST_GLYPHS = dict(zip(TEST_IDS, "①②③④⑤⑥⑦⑧⑨"))
STATUSES = ("pass", "fail", "crash")

InProcess = Callable[[Path, Path, "str | None", Engine], None]


@dataclass
class PluginRun:
    returncode: int
    stdout: str = ""
    stderr: str = ""
    elapsed: float = 0.0


@dataclass
class CleanerPlugin:
    """A directory-to-directory cleaner.

    ``invoke_cmd`` is a template with ``{input_dir}``, ``{output_dir}`` and
    (when ``needs_root_hint``) ``{root}`` placeholders. ``func`` runs a
    cleaner in-process instead.
    """

    name: str
    invoke_cmd: str | None = None
    needs_root_hint: bool = False
    func: InProcess | None = None
    timeout: float = DEFAULT_TIMEOUT

    def check(self) -> None:
        if self.func is not None:
            return
        if not self.invoke_cmd:
            raise PluginMissing(f"{self.name}: no command configured")
        exe = shlex.split(self.invoke_cmd)[0]
        if shutil.which(exe) is None and not (os.path.isabs(exe) and os.access(exe, os.X_OK)):
            raise PluginMissing(f"{self.name}: {exe!r} not found")

    def argv(self, input_dir: Path, output_dir: Path, root: str | None) -> list[str]:
        assert self.invoke_cmd is not None
        values = {"input_dir": str(input_dir), "output_dir": str(output_dir), "root": root or ""}
        return [tok.format(**values) for tok in shlex.split(self.invoke_cmd)]

    def run(self, input_dir: Path, output_dir: Path, root: str | None, engine: Engine) -> PluginRun:
        start = time.monotonic()
        if self.func is not None:
            try:
                self.func(input_dir, output_dir, root, engine)
            except Exception as exc:  # noqa: BLE001 - any failure is a crash
                return PluginRun(1, "", f"{type(exc).__name__}: {exc}", time.monotonic() - start)
            return PluginRun(0, elapsed=time.monotonic() - start)
        try:
            proc = subprocess.run(self.argv(input_dir, output_dir, root), capture_output=True, text=True,
                                  timeout=self.timeout, stdin=subprocess.DEVNULL)
        except subprocess.TimeoutExpired:
            return PluginRun(-1, "", f"timed out after {self.timeout:g}s", time.monotonic() - start)
        except OSError as exc:
            return PluginRun(-1, "", str(exc), time.monotonic() - start)
        return PluginRun(proc.returncode, proc.stdout, proc.stderr, time.monotonic() - start)


def _builtin_clean(input_dir: Path, output_dir: Path, root: str | None, engine: Engine) -> None:
    from .pipeline import CleanOptions, clean_bundle

    with ingest(input_dir) as bundle:
        res = clean_bundle(bundle, output_dir, engine, CleanOptions(root=root or None, verify=False,
                                                                    overwrite=True))
    if res.output is None:
        raise TexScrubError(res.report.error or "clean produced no output")


def builtin_plugin() -> CleanerPlugin:
    return CleanerPlugin("texscrub", func=_builtin_clean)


def module_plugin(name: str, module: str) -> CleanerPlugin:
    cmd = f"{shlex.quote(sys.executable)} -m {module} {{input_dir}} {{output_dir}}"
    return CleanerPlugin(name, cmd)


def naive_plugin() -> CleanerPlugin:
    return module_plugin("naive-percent", "texscrub.plugins.naive")


def identity_plugin() -> CleanerPlugin:
    return module_plugin("identity", "texscrub.plugins.identity")


BUILTIN_PLUGINS: dict[str, Callable[[], CleanerPlugin]] = {
    "texscrub": builtin_plugin,
    "naive-percent": naive_plugin,
    "identity": identity_plugin,
}


def load_plugins(path: str | Path) -> list[CleanerPlugin]:
    """Plugins from a TOML file of ``[[plugin]]`` tables (name, command, needs_root_hint)."""
    from ._toml import loads

    data = loads(Path(path).read_text("utf-8"))
    out = []
    for entry in data.get("plugin", []):
        out.append(CleanerPlugin(str(entry["name"]), str(entry["command"]),
                                 bool(entry.get("needs_root_hint", False)),
                                 timeout=float(entry.get("timeout", DEFAULT_TIMEOUT))))
    return out


def get_plugin(name: str) -> CleanerPlugin:
    if name not in BUILTIN_PLUGINS:
        raise PluginMissing(f"unknown plugin {name!r}; known: {', '.join(sorted(BUILTIN_PLUGINS))}")
    return BUILTIN_PLUGINS[name]()


# -- MWE corpus -----------------------------------------------------------

@dataclass(frozen=True)
class MweCase:
    test_id: int
    name: str
    directory: Path
    absent: dict[str, list[str]]
    present: dict[str, list[str]]
    absent_files: tuple[str, ...] = ()


def mwe_root() -> Path:
    return Path(str(resources.files("texscrub") / "mwe"))


def load_mwe(root: Path | None = None) -> list[MweCase]:
    base = root or mwe_root()
    cases = []
    for d in sorted(p for p in base.iterdir() if p.is_dir()):
        meta = json.loads((d / "expect.json").read_text("utf-8"))
        cases.append(MweCase(int(meta["id"]), meta["name"], d, meta.get("absent", {}), meta.get("present", {}),
                             tuple(meta.get("absent_files", ()))))
    cases.sort(key=lambda c: c.test_id)
    return cases


@dataclass
class TestCaseResult:
    test_id: int
    status: str
    detail: str = ""
    outcome: CleanOutcome | None = None

    __test__ = False  # not a pytest class

    @property
    def glyph(self) -> str:
        return TEST_GLYPHS[self.test_id]


def _freeze(tree: Path) -> None:
    for dirpath, _dirs, files in os.walk(tree):
        for f in files:
            os.chmod(Path(dirpath) / f, stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH)
        os.chmod(dirpath, stat.S_IRUSR | stat.S_IXUSR | stat.S_IRGRP | stat.S_IXGRP)


def _thaw(tree: Path) -> None:
    for dirpath, _dirs, files in os.walk(tree):
        os.chmod(dirpath, stat.S_IRWXU)
        for f in files:
            os.chmod(Path(dirpath) / f, stat.S_IRUSR | stat.S_IWUSR)


@dataclass
class PluginInvocation:
    run: PluginRun
    output: SubmissionBundle | None
    input_modified: bool


def invoke_isolated(plugin: CleanerPlugin, bundle: SubmissionBundle, scratch: Path, engine: Engine,
                    root: str | None = None) -> PluginInvocation:
    """Run a plugin on a read-only copy of ``bundle`` inside ``scratch``."""
    src = scratch / "input"
    dst = scratch / "output"
    bundle.copy_to(src)
    before = from_directory(src).content_hash()
    _freeze(src)
    try:
        hint = root if plugin.needs_root_hint or plugin.func is not None else None
        run = plugin.run(src, dst, hint, engine)
    finally:
        _thaw(src)
    modified = from_directory(src).content_hash() != before
    out = None
    if run.returncode == 0 and dst.is_dir() and any(dst.iterdir()):
        out = from_directory(dst)
    return PluginInvocation(run, out, modified)


def check_expectations(case: MweCase, output: SubmissionBundle) -> list[str]:
    problems = []
    for path, needles in case.absent.items():
        if path not in output.files:
            problems.append(f"{path} missing from output")
            continue
        text = output.read(path)
        problems += [f"{path}: still contains {n!r}" for n in needles if n.encode() in text]
    for path, needles in case.present.items():
        if path not in output.files:
            continue
        text = output.read(path)
        problems += [f"{path}: lost {n!r}" for n in needles if n.encode() not in text]
    problems += [f"{p} not removed" for p in case.absent_files if p in output.files]
    return problems


def run_case(plugin: CleanerPlugin, case: MweCase, engine: Engine, *, dpi: int = 150) -> TestCaseResult:
    with tempfile.TemporaryDirectory(prefix=f"texscrub-mwe{case.test_id}-") as tmp:
        original = from_directory(case.directory)
        # the expectation file is harness data, not part of the submission
        original.files.pop("expect.json", None)
        inv = invoke_isolated(plugin, original, Path(tmp), engine, root="main.tex")
        if inv.input_modified:
            return TestCaseResult(case.test_id, "crash", "plugin modified its input")
        if inv.run.returncode != 0 or inv.output is None:
            detail = (inv.run.stderr or "no output").strip().splitlines()
            return TestCaseResult(case.test_id, "crash", detail[-1] if detail else "crash")
        problems = check_expectations(case, inv.output)
        verdict = judge(original, inv.output, engine, roots=["main.tex"], dpi=dpi)
        if verdict.verdict != "beneficial":
            problems.append(f"verdict {verdict.verdict}: {verdict.reason}")
        return TestCaseResult(case.test_id, "fail" if problems else "pass", "; ".join(problems), verdict)


def run_test_suite(plugin: CleanerPlugin, engine: Engine, cases: Iterable[MweCase] | None = None,
                   *, dpi: int = 150) -> list[TestCaseResult]:
    """One result per MWE case, in test-id order."""
    plugin.check()
    return [run_case(plugin, c, engine, dpi=dpi) for c in (cases if cases is not None else load_mwe())]


def suite_table(results: dict[str, list[TestCaseResult]]) -> str:
    """Plain-text table: one row per plugin, one column per test."""
    names = list(results)
    width = max([len(n) for n in names] + [6])
    mark = {"pass": "✓", "fail": "✗", "crash": "!"}
    head = "Tool".ljust(width) + " " + " ".join(TEST_GLYPHS[i] for i in TEST_IDS)
    lines = [head, "-" * len(head)]
    for name in names:
        by_id = {r.test_id: r for r in results[name]}
        cells = [mark[by_id[i].status] if i in by_id else "-" for i in TEST_IDS]
        lines.append(name.ljust(width) + " " + " ".join(cells))
    lines.append("")
    lines.append("✓ pass   ✗ fail   ! crash")
    for case in load_mwe():
        lines.append(f"{TEST_GLYPHS[case.test_id]} {case.name}")
    return "\n".join(lines)


def suite_json(results: dict[str, list[TestCaseResult]]) -> dict[str, object]:
    return {
        name: [{"test": r.test_id, "status": r.status, "detail": r.detail,
                "verdict": r.outcome.verdict if r.outcome else None} for r in rs]
        for name, rs in results.items()
    }


# -- corpus scoring -------------------------------------------------------

@dataclass
class BundleScore:
    name: str
    verdict: str
    removed: list[str] = field(default_factory=list)
    over: list[str] = field(default_factory=list)
    under: list[str] = field(default_factory=list)
    detail: str = ""


@dataclass
class CorpusScore:
    bundles: list[BundleScore]

    def share(self, verdict: str) -> float:
        return sum(b.verdict == verdict for b in self.bundles) / len(self.bundles) if self.bundles else 0.0

    @property
    def over_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(len(b.over) for b in self.bundles).items()))

    @property
    def under_histogram(self) -> dict[int, int]:
        return dict(sorted(Counter(len(b.under) for b in self.bundles).items()))

    def to_dict(self) -> dict[str, object]:
        return {
            "beneficial_share": self.share("beneficial"),
            "breaks_share": self.share("breaks"),
            "neutral_share": self.share("neutral"),
            "over_removal_histogram": self.over_histogram,
            "under_removal_histogram": self.under_histogram,
            "bundles": [b.__dict__ for b in self.bundles],
        }


def oracle_classification(original: SubmissionBundle, cleaned: SubmissionBundle | None, engine: Engine,
                          roots: list[str], timeout: float = DEFAULT_TIMEOUT) -> dict[str, Classification]:
    """Recorder verdicts for the plugin's sources with every removed file put back.

    Content edits can legitimately make a file unneeded (an inlined ``.bbl``),
    so the oracle judges the edited sources rather than the original ones. If
    the restored tree does not build, the original's verdicts are used.
    """
    def records_of(b: SubmissionBundle) -> dict[str, Classification]:
        return classify(original, [_rebased(compile_with_recorder(b, r, engine, timeout=timeout), original)
                                   for r in roots])

    if cleaned is None:
        return records_of(original)
    with tempfile.TemporaryDirectory(prefix="texscrub-oracle-") as tmp:
        restored = Path(tmp)
        original.copy_to(restored)
        for path in cleaned.paths():
            if path in original.files:
                target = restored / path
                shutil.copyfile(cleaned.abspath(path), target)
        rb = from_directory(restored)
        rb.readme = original.readme
        try:
            return records_of(rb)
        except CompileFailed:
            return records_of(original)


def _rebased(rec, original: SubmissionBundle):  # type: ignore[no-untyped-def]
    from .dangling import BuildRecord

    present = set(original.files)
    return BuildRecord(rec.root, frozenset(p for p in rec.inputs if p in present),
                       frozenset(p for p in rec.outputs if p in present), rec.passes, rec.engine_version)


def removal_errors(original: SubmissionBundle, kept: Iterable[str],
                   verdicts: dict[str, Classification]) -> tuple[list[str], list[str]]:
    """(over, under): required files removed, dangling files kept."""
    kept = set(kept)
    removed = set(original.files) - kept
    dangling = {p for p, c in verdicts.items() if c.verdict == "dangling"}
    protected = {p for p, c in verdicts.items() if c.verdict != "dangling"}
    return sorted(removed & protected), sorted(dangling & kept)


def score_bundle(plugin: CleanerPlugin, bundle_path: Path, engine: Engine, *, dpi: int = 150,
                 timeout: float = DEFAULT_TIMEOUT) -> BundleScore:
    name = bundle_path.name
    with ingest(bundle_path) as original, tempfile.TemporaryDirectory(prefix="texscrub-score-") as tmp:
        try:
            roots = detect_roots(original)
        except TexScrubError as exc:
            return BundleScore(name, "breaks", detail=f"no root: {exc}")
        inv = invoke_isolated(plugin, original, Path(tmp), engine, root=roots[0])
        if inv.input_modified:
            return BundleScore(name, "breaks", detail="plugin modified its input")
        if inv.run.returncode != 0 or inv.output is None:
            return BundleScore(name, "breaks", detail=f"plugin failed: {inv.run.stderr.strip()[-200:]}")
        kept = set(inv.output.files)
        try:
            verdicts = oracle_classification(original, inv.output, engine, roots, timeout)
        except CompileFailed as exc:
            return BundleScore(name, "breaks", detail=f"original does not compile: {exc}")
        over, under = removal_errors(original, kept, verdicts)
        outcome = judge(original, inv.output, engine, roots=roots, dpi=dpi, timeout=timeout)
        return BundleScore(name, outcome.verdict, sorted(set(original.files) - kept), over, under, outcome.reason)


def score_corpus(plugin: CleanerPlugin, bundles: Iterable[Path], engine: Engine | EnginePool, *,
                 dpi: int = 150, timeout: float = DEFAULT_TIMEOUT) -> CorpusScore:
    """Verdict shares and over/under-removal counts for ``plugin`` over a corpus."""
    plugin.check()
    paths = list(bundles)
    if isinstance(engine, EnginePool):
        pool = engine

        def one(p: Path) -> BundleScore:
            with pool.acquire() as eng:
                return score_bundle(plugin, p, eng, dpi=dpi, timeout=timeout)

        with ThreadPoolExecutor(max_workers=pool.size) as ex:
            return CorpusScore(list(ex.map(one, paths)))
    return CorpusScore([score_bundle(plugin, p, engine, dpi=dpi, timeout=timeout) for p in paths])
