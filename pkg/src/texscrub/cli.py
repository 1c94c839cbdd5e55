"""Command-line entry point: ``texscrub clean|scan|verify|bench|report``.

Exit codes: 0 success (or identical), 1 findings present or visual mismatch,
2 operational error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from pathlib import Path
from typing import Any

from . import __version__
from .bundle import SubmissionBundle, detect_roots, ingest
from .config import Config, load_config
from .dangling import classify, compile_with_recorder
from .engines import DEFAULT_TIMEOUT, Engine, EnginePool, build_epoch, select_engine
from .errors import CompileFailed, NoRootFound, TexScrubError, UsageError
from .metadata import make_backend
from .output import is_inside
from .report import SanitizationReport, replay
from .verifier import DEFAULT_DPI, CommandRasterizer, compare

EXIT_OK, EXIT_FOUND, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("texscrub")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML config file (default: $TEXSCRUB_CONFIG)")
    p.add_argument("--engine", help="auto, pdflatex or texlive.js")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, metavar="SECS",
                   help="per-compilation wall-clock limit (default 300)")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel compilations")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _visual(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dpi", type=int, default=None, help=f"rasterization resolution (default {DEFAULT_DPI})")
    p.add_argument("--fuzz", type=int, default=0, metavar="N", help="tolerated differing pixels per page")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="texscrub", description="Sanitize LaTeX submission bundles before publication.")
    parser.add_argument("--version", action="version", version=f"texscrub {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    c = sub.add_parser("clean", parents=[common], help="write a sanitized copy of a bundle")
    c.add_argument("inputs", nargs="+", metavar="INPUT", help="directory or .tar/.tar.gz/.zip archive")
    c.add_argument("--out", "-o", required=True,
                   help="output directory or archive; with several inputs, a directory of outputs")
    c.add_argument("--report", help="write the JSON report here (several inputs: a directory)")
    c.add_argument("--keep-comments", action="store_true", help="leave irrelevant content in place")
    c.add_argument("--keep-dangling", action="store_true", help="keep files the build never reads")
    c.add_argument("--keep-metadata", action="store_true", help="do not strip image/PDF metadata")
    c.add_argument("--strip-times", action="store_true", help="set all mtimes to the build epoch")
    c.add_argument("--root", help="root .tex file (bundle-relative)")
    c.add_argument("--no-verify", action="store_true", help="skip the visual check (verdict 'unverified')")
    c.add_argument("--overwrite", action="store_true", help="replace an existing output")
    _visual(c)

    s = sub.add_parser("scan", parents=[common], help="report secrets, personal data and metadata")
    s.add_argument("input", metavar="INPUT")
    s.add_argument("--rules", help="rule catalog (TOML or JSON) replacing the built-in rules")
    s.add_argument("--jsonl", help="write findings as JSON lines to this file ('-' for stdout)")
    s.add_argument("--redact", dest="redact", action="store_true", default=True,
                   help="mask matched text (default)")
    s.add_argument("--no-redact", dest="redact", action="store_false", help="show matched text")
    s.add_argument("--export-comments", metavar="FILE", help="dump irrelevant spans as JSON lines")
    s.add_argument("--no-compile", action="store_true",
                   help="do not compile; dangling files are then not identified")
    s.add_argument("--root")

    v = sub.add_parser("verify", parents=[common], help="compare two PDFs or two bundles visually")
    v.add_argument("a")
    v.add_argument("b")
    v.add_argument("--root")
    _visual(v)

    b = sub.add_parser("bench", parents=[common], help="run cleaners through the MWE suite or a corpus")
    b.add_argument("--plugin", action="append", default=[], help="built-in plugin name (repeatable)")
    b.add_argument("--plugins", metavar="TOML", help="extra command plugins ([[plugin]] tables)")
    b.add_argument("--corpus", metavar="DIR", help="score cleaners on every bundle in DIR instead")
    b.add_argument("--json", metavar="FILE", help="write results as JSON")
    _visual(b)

    r = sub.add_parser("report", help="pretty-print a stored report")
    r.add_argument("report")
    r.add_argument("--replay", metavar="INPUT", help="re-apply the report to INPUT and check the output hash")
    r.add_argument("--json", action="store_true", help="print the raw JSON")
    return parser


def _engine(cfg: Config, args: argparse.Namespace) -> Engine:
    return select_engine(args.engine or cfg.engine, cfg.engine_cmd, cfg.bibtex_cmd, cfg.texlive_js)


def _engine_pool(cfg: Config, args: argparse.Namespace) -> EnginePool:
    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    return EnginePool(lambda: _engine(cfg, args), args.jobs)


def _rasterizer(cfg: Config) -> CommandRasterizer | None:
    return CommandRasterizer(cfg.raster_cmd) if cfg.raster_cmd else None


def _dpi(cfg: Config, args: argparse.Namespace) -> int:
    return args.dpi or cfg.dpi or DEFAULT_DPI


def _outside(path: str | None, inputs: list[str]) -> None:
    if path is None:
        return
    for src in inputs:
        if Path(src).is_dir() and is_inside(Path(path), Path(src)):
            raise UsageError(f"{path} is inside the input {src}; inputs are never written to")


# -- clean ----------------------------------------------------------------

def _clean_one(src: str, out: Path, report_path: Path | None, engine: Engine, cfg: Config,
               args: argparse.Namespace) -> tuple[int, str]:
    from .pipeline import CleanOptions, clean_bundle

    opts = CleanOptions(
        keep_comments=args.keep_comments, keep_dangling=args.keep_dangling, keep_metadata=args.keep_metadata,
        strip_times=args.strip_times, verify=not args.no_verify, root=args.root, timeout=args.timeout,
        dpi=_dpi(cfg, args), fuzz=args.fuzz, epoch=build_epoch(), overwrite=args.overwrite,
        rasterizer=_rasterizer(cfg), metadata_backend=make_backend(cfg.metadata_backend_cmd),
    )
    try:
        with ingest(src) as bundle:
            result = clean_bundle(bundle, out, engine, opts)
    except TexScrubError as exc:
        report = SanitizationReport(origin=str(src), error=str(exc))
        if report_path:
            report.write(report_path)
        return EXIT_ERROR, f"{src}: {exc}"
    if report_path:
        result.report.write(report_path)
    code = EXIT_OK
    if result.verdict == "breaks":
        # a bundle that never compiled is an operational error, not a mismatch
        operational = result.outcome.visual is None
        code = EXIT_ERROR if operational else EXIT_FOUND
    return code, result.report.summary()


def cmd_clean(args: argparse.Namespace, cfg: Config) -> int:
    out = Path(args.out)
    _outside(args.out, args.inputs)
    _outside(args.report, args.inputs)
    jobs: list[tuple[str, Path, Path | None]] = []
    if len(args.inputs) == 1:
        jobs.append((args.inputs[0], out, Path(args.report) if args.report else None))
    else:
        names = [Path(i).name.split(".")[0] or "bundle" for i in args.inputs]
        if len(set(names)) != len(names):
            raise UsageError("input names collide; clean them one at a time")
        reports = Path(args.report) if args.report else None
        if reports:
            reports.mkdir(parents=True, exist_ok=True)
        out.mkdir(parents=True, exist_ok=True)
        for src, name in zip(args.inputs, names):
            jobs.append((src, out / name, reports / f"{name}.json" if reports else None))

    with ExitStack() as stack:
        pool = _engine_pool(cfg, args)
        stack.callback(pool.close)

        def run(job: tuple[str, Path, Path | None]) -> tuple[int, str]:
            with pool.acquire() as eng:
                return _clean_one(*job, eng, cfg, args)

        if pool.size == 1:
            results = [run(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=pool.size) as ex:
                results = list(ex.map(run, jobs))
    for _code, text in results:
        print(text)
    return max(code for code, _ in results)


# -- scan -----------------------------------------------------------------

def _scan_classes(bundle: SubmissionBundle, engine: Engine, args: argparse.Namespace) -> tuple[dict, list[str]]:  # type: ignore[type-arg]
    try:
        roots = detect_roots(bundle, args.root)
        records = [compile_with_recorder(bundle, r, engine, timeout=args.timeout) for r in roots]
    except (NoRootFound, CompileFailed) as exc:
        return {}, [f"dangling files not identified: {exc}"]
    return classify(bundle, records), []


def cmd_scan(args: argparse.Namespace, cfg: Config) -> int:
    from .scanner import BUILTIN_RULES, load_rules, scan_bundle, write_jsonl

    _outside(args.jsonl if args.jsonl != "-" else None, [args.input])
    _outside(args.export_comments, [args.input])
    rules_path = args.rules or cfg.rules
    rules = load_rules(rules_path) if rules_path else BUILTIN_RULES
    with ingest(args.input) as bundle:
        classes: dict = {}  # type: ignore[type-arg]
        warnings: list[str] = []
        if not args.no_compile:
            engine = _engine(cfg, args)
            try:
                classes, warnings = _scan_classes(bundle, engine, args)
            finally:
                engine.close()
        result = scan_bundle(bundle, classes, rules=rules, backend=make_backend(cfg.metadata_backend_cmd),
                             epoch=build_epoch())
    warnings += result.warnings
    if args.jsonl == "-":
        write_jsonl(result.findings, sys.stdout, args.redact)
    else:
        if args.jsonl:
            with open(args.jsonl, "w", encoding="utf-8") as fh:
                write_jsonl(result.findings, fh, args.redact)
        for f in result.findings:
            where = f"{f.file}:{f.span.line}" if f.span is not None else f.file
            text = f.redacted if args.redact else f.matched
            text = text if len(text) <= 60 else text[:57] + "..."
            flags = "".join(t for t, on in (("C", f.in_comment), ("D", f.in_dangling_file)) if on)
            print(f"{f.severity} {f.rule:<28} {where:<32} {flags:<2} {text}")
        ts = result.timestamps
        print(f"{len(result.findings)} finding(s): H={result.count('H')} M={result.count('M')} "
              f"L={result.count('L')}; {ts['unique_timestamps']} distinct timestamp(s)")
    if args.export_comments:
        with open(args.export_comments, "w", encoding="utf-8") as fh:
            for rec in result.comments:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_FOUND if result.findings else EXIT_OK


# -- verify ---------------------------------------------------------------

def _is_pdf(path: str) -> bool:
    p = Path(path)
    if not p.is_file():
        return False
    with p.open("rb") as fh:
        return fh.read(5) == b"%PDF-"


def cmd_verify(args: argparse.Namespace, cfg: Config) -> int:
    dpi = _dpi(cfg, args)
    raster = _rasterizer(cfg)
    if _is_pdf(args.a) and _is_pdf(args.b):
        diff = compare(Path(args.a).read_bytes(), Path(args.b).read_bytes(), dpi, fuzz=args.fuzz,
                       rasterizer=raster)
        print(json.dumps(diff.to_dict(), indent=2, sort_keys=True))
        if diff.verdict == "incomparable":
            return EXIT_ERROR
        return EXIT_OK if diff.verdict == "identical" else EXIT_FOUND
    if _is_pdf(args.a) or _is_pdf(args.b):
        raise UsageError("compare two PDFs or two bundles, not one of each")
    from .verifier import judge

    engine = _engine(cfg, args)
    try:
        with ingest(args.a) as a, ingest(args.b) as b:
            roots = detect_roots(a, args.root)
            try:
                pdfs = {r: compile_with_recorder(a, r, engine, timeout=args.timeout).pdf for r in roots}
            except CompileFailed as exc:
                print(f"{args.a} does not compile: {exc}", file=sys.stderr)
                return EXIT_ERROR
            res = judge(a, b, engine, roots=roots, dpi=dpi, fuzz=args.fuzz, timeout=args.timeout,
                        rasterizer=raster, original_pdfs=pdfs)
    finally:
        engine.close()
    print(json.dumps(res.to_dict(), indent=2, sort_keys=True))
    if not res.compiles_after:
        return EXIT_ERROR
    return EXIT_OK if res.visual is not None and res.visual.verdict == "identical" else EXIT_FOUND


# -- bench ----------------------------------------------------------------

def cmd_bench(args: argparse.Namespace, cfg: Config) -> int:
    from .harness import get_plugin, load_plugins, run_test_suite, score_corpus, suite_json, suite_table

    plugins = [get_plugin(n) for n in (args.plugin or ["texscrub", "naive-percent"])]
    if args.plugins:
        plugins += load_plugins(args.plugins)
    dpi = _dpi(cfg, args)
    data: dict[str, Any]
    if args.corpus:
        corpus = sorted(p for p in Path(args.corpus).iterdir() if not p.name.startswith("."))
        pool = _engine_pool(cfg, args)
        try:
            scores = {p.name: score_corpus(p, corpus, pool, dpi=dpi, timeout=args.timeout) for p in plugins}
        finally:
            pool.close()
        data = {name: s.to_dict() for name, s in scores.items()}
        for name, s in scores.items():
            print(f"{name}: beneficial {s.share('beneficial'):.0%}  breaks {s.share('breaks'):.0%}  "
                  f"neutral {s.share('neutral'):.0%}  over {s.over_histogram}  under {s.under_histogram}")
    else:
        engine = _engine(cfg, args)
        try:
            results = {p.name: run_test_suite(p, engine, dpi=dpi) for p in plugins}
        finally:
            engine.close()
        data = suite_json(results)
        print(suite_table(results))
    if args.json:
        Path(args.json).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", "utf-8")
    return EXIT_OK


# -- report ---------------------------------------------------------------

def cmd_report(args: argparse.Namespace, cfg: Config) -> int:
    try:
        report = SanitizationReport.load(args.report)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read report {args.report}: {exc}") from exc
    print(report.to_json() if args.json else report.summary(), end="\n" if not args.json else "")
    if not args.replay:
        return EXIT_OK
    with ingest(args.replay) as bundle:
        if report.bundle_hash_before and bundle.content_hash() != report.bundle_hash_before:
            print(f"replay: {args.replay} is not the bundle this report was made from", file=sys.stderr)
            return EXIT_FOUND
        got = replay(report, bundle, make_backend(cfg.metadata_backend_cmd))
    if report.timestamps_normalized:
        print("replay: content hash compared; timestamps are not part of it")
    if got == report.bundle_hash_after:
        print(f"replay: ok ({got[:16]})")
        return EXIT_OK
    print(f"replay: hash mismatch {got[:16]} != {(report.bundle_hash_after or '')[:16]}")
    return EXIT_FOUND


COMMANDS = {"clean": cmd_clean, "scan": cmd_scan, "verify": cmd_verify, "bench": cmd_bench, "report": cmd_report}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\ntexscrub: error: a command is required")
        logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(getattr(args, "config", None))
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_ERROR
    except TexScrubError as exc:
        print(f"texscrub: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        return 130


def main() -> None:
    raise SystemExit(run())
