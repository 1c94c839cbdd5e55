"""Irrelevant-content detection and clean plans.

Content is irrelevant when TeX never typesets it: comments, comment
environments, text after ``\\end{document}``, branches of conditionals that
are statically false, and arguments that a macro discards. Every removal is
shaped so that the token stream TeX sees is unchanged.
"""

from __future__ import annotations

import os
import posixpath
import re
import shutil
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .bundle import SubmissionBundle, include_references, resolve_tex_target, sha256_bytes
from .dangling import Classification
from .errors import StalePlan, WriteFailure
from .latex_ast import (
    DEFAULT_OPAQUE_ENVS,
    DEFAULT_VERBATIM_ENVS,
    AstNode,
    Root,
    Span,
    apply_edits,
    detect_encoding,
    parse,
    SourceFile,
)
from .output import is_inside, make_stage, publish

MECHANISMS = (
    "line_comment",
    "comment_environment",
    "outside_document",
    "skipped_if_branch",
    "discarded_command_argument",
    "special_environment_text",
)

# Conditionals TeX itself provides (plus e-TeX and pdfTeX additions).
PRIMITIVE_IFS: frozenset[str] = frozenset(
    {
        "if", "ifcat", "ifnum", "ifdim", "ifodd", "ifvmode", "ifhmode", "ifmmode", "ifinner",
        "ifvoid", "ifhbox", "ifvbox", "ifx", "ifeof", "iftrue", "iffalse", "ifcase",
        "ifdefined", "ifcsname", "iffontchar", "ifincsname", "ifpdfprimitive", "ifpdfabsnum",
        "ifpdfabsdim", "ifprimitive", "ifabsnum", "ifabsdim", "ifpdf", "ifpdftex", "ifluatex",
        "ifxetex", "ifLuaTeX", "ifXeTeX", "ifPDFTeX", "ifvtex", "iftutex",
    }
)

CLEANABLE_EXTENSIONS = (".tex",)
_BLANK = b" \t"
_CW_END = re.compile(rb"\\[A-Za-z@]+\Z")


@dataclass(frozen=True)
class IrrelevantSpan:
    file: str
    span: Span
    mechanism: str
    replacement: bytes = b""


@dataclass
class FlagInfo:
    declared: list[tuple[str, int]] = field(default_factory=list)
    setters: list[tuple[str, int, bool, bool]] = field(default_factory=list)  # file, offset, value, static


@dataclass(frozen=True)
class Discarding:
    """A macro whose body never references some of its arguments."""

    nargs: int
    unused: frozenset[int]
    file: str
    defined_at: int


@dataclass
class DocumentContext:
    """Bundle-wide facts needed to decide what is statically irrelevant."""

    is_root: bool = True
    comment_envs: frozenset[str] = frozenset()
    excluded_envs: frozenset[str] = frozenset()
    flags: dict[str, bool] = field(default_factory=dict)
    declared_ifs: frozenset[str] = frozenset()
    discarding: dict[str, Discarding] = field(default_factory=dict)
    safe_use_files: frozenset[str] | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def opaque_envs(self) -> frozenset[str]:
        return DEFAULT_OPAQUE_ENVS | self.excluded_envs


# -- tree helpers -------------------------------------------------------

def _static_position(node: AstNode) -> str | None:
    """'preamble', 'body' or None when under a group, branch or definition."""
    where = "preamble"
    for anc in node.ancestors():
        if anc.kind == "root":
            return where
        if anc.kind == "environment" and anc.name == "document" and anc.parent is not None \
                and anc.parent.kind == "root":
            where = "body"
            continue
        return None
    return where


def _document_env(root: Root) -> AstNode | None:
    for child in root.children:
        if child.kind == "environment" and child.name == "document":
            return child
    return None


def _next_sibling_groups(root: Root, node: AstNode, count: int) -> list[AstNode] | None:
    parent = node.parent
    if parent is None:
        return None
    sibs = parent.children
    i = sibs.index(node) + 1
    out: list[AstNode] = []
    while len(out) < count:
        while i < len(sibs) and sibs[i].kind == "text" and _is_arg_gap(root.text_of(sibs[i])):
            i += 1
        if i >= len(sibs) or sibs[i].kind != "group":
            return None
        out.append(sibs[i])
        i += 1
    return out


def _is_arg_gap(raw: bytes) -> bool:
    return not raw.strip() and raw.count(b"\n") <= 1


def _next_command(root: Root, node: AstNode, skip_eq: bool = False) -> AstNode | None:
    parent = node.parent
    if parent is None:
        return None
    sibs = parent.children
    i = sibs.index(node) + 1
    while i < len(sibs) and sibs[i].kind == "text":
        raw = root.text_of(sibs[i]).strip()
        if raw and not (skip_eq and raw == b"="):
            return None
        i += 1
    if i < len(sibs) and sibs[i].kind == "command_use":
        return sibs[i]
    return None


def _group_use_names(trees: Mapping[str, Root]) -> dict[str, list[str]]:
    names: dict[str, list[str]] = {}
    for path, tree in trees.items():
        for node in tree.walk():
            if node.kind == "command_use" and node.name == "usepackage":
                groups = _next_sibling_groups(tree, node, 1)
                if groups:
                    raw = tree.text_of(groups[0])[1:-1].decode("latin-1")
                    for name in raw.split(","):
                        names.setdefault(name.strip(), []).append(path)
    return names


# -- context ------------------------------------------------------------

def build_context(
    trees: Mapping[str, Root],
    roots: Iterable[str],
    preamble_files: Iterable[str] = (),
) -> dict[str, DocumentContext]:
    """Derive per-file contexts from every parsed TeX file of a bundle.

    ``preamble_files`` are files pulled in before ``\\begin{document}``;
    definitions there count as preamble definitions, and uses there are
    never rewritten.
    """
    roots = set(roots)
    preamble = set(preamble_files)
    packages = _group_use_names(trees)

    env_redefined = False
    included: set[str] = set()
    excluded: set[str] = set()
    for tree in trees.values():
        for node in tree.walk():
            if node.kind == "command_definition" and node.name == "comment":
                env_redefined = True
            if node.kind == "command_use" and node.name in ("excludecomment", "includecomment"):
                groups = _next_sibling_groups(tree, node, 1)
                if groups:
                    name = tree.text_of(groups[0])[1:-1].decode("latin-1").strip()
                    (excluded if node.name == "excludecomment" else included).add(name)
    comment_envs: set[str] = set()
    notes: list[str] = []
    if ("comment" in packages or "verbatim" in packages) and not env_redefined \
            and "comment" not in included:
        comment_envs.add("comment")
    elif "comment" not in packages and "verbatim" not in packages:
        notes.append("comment environment left untouched: neither comment nor verbatim is loaded")
    if "comment" not in packages:
        excluded.clear()
    excluded -= {"comment"}

    flags, declared = _resolve_flags(trees, roots, preamble)
    discarding = _discarding_macros(trees, roots, preamble)
    safe = frozenset(p for p in trees if p not in preamble)
    out: dict[str, DocumentContext] = {}
    for path in trees:
        out[path] = DocumentContext(
            is_root=path in roots,
            comment_envs=frozenset(comment_envs),
            excluded_envs=frozenset(excluded),
            flags=dict(flags),
            declared_ifs=frozenset(declared),
            discarding=dict(discarding),
            safe_use_files=safe,
            notes=list(notes),
        )
    return out


def _in_static_preamble(path: str, node: AstNode, roots: set[str], preamble: set[str]) -> bool:
    pos = _static_position(node)
    if path in roots:
        return pos == "preamble"
    return path in preamble and pos == "preamble"


def _resolve_flags(
    trees: Mapping[str, Root], roots: set[str], preamble: set[str]
) -> tuple[dict[str, bool], set[str]]:
    info: dict[str, FlagInfo] = {}
    for path, tree in trees.items():
        for node in tree.walk():
            if node.kind != "command_use" or node.name is None:
                continue
            if node.name == "newif":
                target = _next_command(tree, node)
                if target is not None and target.name and target.name.startswith("if"):
                    flag = target.name[2:]
                    fi = info.setdefault(flag, FlagInfo())
                    fi.declared.append((path, node.span.start))
                    if not _in_static_preamble(path, node, roots, preamble):
                        fi.declared.append((path, -1))
            elif node.name == "let":
                target = _next_command(tree, node)
                if target is not None and target.name and target.name.startswith("if"):
                    value = _next_command(tree, target, skip_eq=True)
                    fi = info.setdefault(target.name[2:], FlagInfo())
                    static = _in_static_preamble(path, node, roots, preamble)
                    val = value is not None and value.name == "iftrue"
                    ok = value is not None and value.name in ("iftrue", "iffalse")
                    fi.setters.append((path, node.span.start, val, static and ok))
    # Setter macros (\Xtrue / \Xfalse) are only recognizable once names are known.
    for path, tree in trees.items():
        for node in tree.walk():
            if node.kind != "command_use" or not node.name:
                continue
            for suffix, value in (("true", True), ("false", False)):
                if node.name.endswith(suffix):
                    flag = node.name[: -len(suffix)]
                    if flag in info:
                        static = _in_static_preamble(path, node, roots, preamble)
                        info[flag].setters.append((path, node.span.start, value, static))
    resolved: dict[str, bool] = {}
    for flag, fi in info.items():
        if len(fi.declared) != 1 or len(fi.setters) > 1:
            continue
        decl_path, decl_pos = fi.declared[0]
        if decl_pos < 0:
            continue
        if not fi.setters:
            resolved[flag] = False
            continue
        s_path, s_pos, value, static = fi.setters[0]
        if not static or (s_path == decl_path and s_pos < decl_pos):
            continue
        resolved[flag] = value
    return resolved, set(info)


def _discarding_macros(
    trees: Mapping[str, Root], roots: set[str], preamble: set[str]
) -> dict[str, Discarding]:
    seen: dict[str, int] = {}
    candidates: dict[str, Discarding] = {}
    for path, tree in trees.items():
        for node in tree.walk():
            if node.kind == "command_use" and node.name == "let":
                target = _next_command(tree, node)
                if target is not None and target.name:
                    seen[target.name] = seen.get(target.name, 0) + 2
            if node.kind != "command_definition" or not node.name:
                continue
            seen[node.name] = seen.get(node.name, 0) + 1
            definer = node.attrs.get("definer")
            if definer in ("providecommand", "providerobustcmd", "ProvideDocumentCommand",
                           "newenvironment", "renewenvironment", "provideenvironment"):
                continue
            nargs = int(node.attrs.get("nargs", 0))  # type: ignore[arg-type]
            if nargs < 1 or node.attrs.get("optional") or node.attrs.get("delimited"):
                continue
            if not _in_static_preamble(path, node, roots, preamble):
                continue
            body = node.children[-1]
            if body.kind != "group":
                continue
            raw = tree.text_of(body).replace(b"##", b"")
            unused = frozenset(k for k in range(1, nargs + 1) if f"#{k}".encode() not in raw)
            if unused:
                candidates[node.name] = Discarding(nargs, unused, path, node.span.end)
    return {name: sig for name, sig in candidates.items() if seen.get(name) == 1}


# -- span finding -------------------------------------------------------

def _line_start(data: bytes, pos: int) -> int:
    return data.rfind(b"\n", 0, pos) + 1


def _line_end(data: bytes, pos: int) -> int:
    """Index of the newline ending the line containing ``pos`` (or len)."""
    k = data.find(b"\n", pos)
    return len(data) if k < 0 else k


def _only_blanks(raw: bytes) -> bool:
    return raw.strip(_BLANK) == b"" or raw.strip(_BLANK) == b"\r"


def _after_newline(data: bytes, end_of_line: int) -> int:
    return min(len(data), end_of_line + 1)


def edit_for_line_comment(data: bytes, span: Span) -> tuple[Span, bytes]:
    """Span and replacement that remove one ``%`` comment.

    A comment alone on its line takes the whole line with it. A trailing
    comment collapses to a bare ``%`` so the end-of-line stays suppressed.
    """
    start = _line_start(data, span.start)
    if _only_blanks(data[start:span.start]):
        end = _after_newline(data, _line_end(data, span.end))
        return Span(start, end, span.line), b""
    return span, b"%"


def _state_before(data: bytes, pos: int) -> str:
    """Tokenizer state just before ``pos``: N (line start), S (skipping) or M."""
    start = _line_start(data, pos)
    before = data[start:pos]
    if _only_blanks(before):
        return "N"
    if before[-1:] in (b" ", b"\t") or _CW_END.search(before):
        return "S"
    return "M"


def _remove_construct(data: bytes, start: int, end: int, line: int) -> tuple[Span, bytes]:
    """Remove ``data[start:end]`` that ends in a control word.

    After a control word TeX skips blanks and, at end of line, the newline.
    The edit keeps that behaviour for whatever follows.
    """
    c = end
    while c < len(data) and data[c] in _BLANK:
        c += 1
    line_terminal = c >= len(data) or data[c] in b"\r\n%"
    state = _state_before(data, start)
    if line_terminal:
        eol = _line_end(data, c)
        if state == "N":
            return Span(_line_start(data, start), _after_newline(data, eol), line), b""
        return Span(start, eol if data[eol - 1:eol] != b"\r" else eol - 1, line), b"%"
    repl = b""
    if state == "S" and _CW_END.search(data[_line_start(data, start):start]) and \
            (chr(data[c]).isalpha() or data[c] == 0x40):
        repl = b" "
    return Span(start, c, line), repl


def _conditional_value(root: Root, cond: AstNode, ctx: DocumentContext) -> bool | None:
    name = cond.name or ""
    if name == "iffalse":
        return False
    if name == "iftrue":
        return True
    if name == "if" and len(cond.children) > 1 and cond.children[1].kind == "text":
        raw = root.text_of(cond.children[1])
        if raw[:1] == b"0" and raw[1:2] in (b" ", b"\t", b"\n", b"\r"):
            return False
        return None
    if name.startswith("if") and name[2:] in ctx.flags:
        return ctx.flags[name[2:]]
    return None


def _known_if(name: str, ctx: DocumentContext) -> bool:
    return name in PRIMITIVE_IFS or name.startswith("if@") or name[2:] in ctx.declared_ifs


def _conditional_is_clean(cond: AstNode, ctx: DocumentContext) -> bool:
    for node in cond.walk():
        if node is cond:
            continue
        if node.kind == "error":
            return False
        if node.kind == "command_use" and node.name and node.name.startswith("if") \
                and node is not cond.children[0]:
            from .latex_ast import NON_CONDITIONAL_IFS

            if node.name not in NON_CONDITIONAL_IFS and not _known_if(node.name, ctx):
                return False
    return True


def _conditional_spans(root: Root, cond: AstNode, ctx: DocumentContext, path: str,
                       whole: list[Span]) -> list[IrrelevantSpan]:
    """Branch edits for ``cond``; a construct removed entirely goes to ``whole``."""
    value = _conditional_value(root, cond, ctx)
    if value is None or not _conditional_is_clean(cond, ctx):
        return []
    data = root.source
    head = cond.children[0]
    fi = cond.children[-1]
    else_nodes = [c for c in cond.children if c.kind == "command_use" and c.name in ("else", "or")]
    if any(c.name == "or" for c in else_nodes) or len(else_nodes) > 1:
        return []
    mech = "skipped_if_branch"
    if not else_nodes:
        if not value:
            whole.append(cond.span)
        return []
    els = else_nodes[0]
    if value:
        start, end = els.span.end, fi.span.start
    else:
        start = head.span.end
        if head.name == "if":
            start += 2  # keep the "0" and the blank it is compared with
        end = els.span.start
    if start >= end or not data[start:end].strip():
        return []
    return [IrrelevantSpan(path, Span(start, end, root.line_of(start)), mech, b"")]


def _removed_constructs(data: bytes, whole: list[Span], path: str) -> list[IrrelevantSpan]:
    """Edits for conditionals removed entirely.

    Neighbours separated only by blanks are removed as one run; fixing up
    whitespace for each on its own could leave a bare ``%`` that a second
    pass would remove again.
    """
    runs: list[list[int]] = []
    lines: list[int] = []
    for span in sorted(whole, key=lambda s: s.start):
        if runs and span.start < runs[-1][1]:
            continue  # nested in a construct already being removed
        if runs and _only_blanks(data[runs[-1][1]:span.start]):
            runs[-1][1] = span.end
        else:
            runs.append([span.start, span.end])
            lines.append(span.line)
    out = []
    for (start, end), line in zip(runs, lines):
        span, repl = _remove_construct(data, start, end, line)
        out.append(IrrelevantSpan(path, span, "skipped_if_branch", repl))
    return out


def _comment_env_span(root: Root, env: AstNode, path: str, mech: str) -> IrrelevantSpan | None:
    data = root.source
    start = _line_start(data, env.span.start)
    if not _only_blanks(data[start:env.span.start]):
        return None
    eol = _line_end(data, env.span.end)
    tail = data[env.span.end:eol]
    if not (_only_blanks(tail) or tail.lstrip(_BLANK).startswith(b"%")):
        return None
    return IrrelevantSpan(path, Span(start, _after_newline(data, eol), env.span.line), mech, b"")


def _document_end(root: Root) -> int | None:
    """Offset just past the top-level ``\\end{document}``, if there is one.

    A stray top-level ``\\end{document}`` (no matching begin) also counts,
    so fragments analysed on their own behave like the tail of a document.
    """
    doc = _document_env(root)
    if doc is not None:
        return doc.span.end if doc.children[-1].name == "end" and doc.attrs.get("unclosed_kind") is None \
            and doc.kind == "environment" else None
    for child in root.children:
        if child.kind == "error" and child.name == "end" and root.text_of(child).replace(b" ", b"") \
                == b"\\end{document}":
            return child.span.end
    return None


def _after_document_span(root: Root, path: str) -> IrrelevantSpan | None:
    end = _document_end(root)
    if end is None:
        return None
    data = root.source
    tail = data[end:]
    if not tail.strip():
        return None
    nl = data.find(b"\n", end)
    if nl >= 0 and not data[end:nl].strip():
        start = nl + 1
        return IrrelevantSpan(path, Span(start, len(data), root.line_of(start)), "outside_document", b"")
    return IrrelevantSpan(path, Span(end, len(data), root.line_of(end)), "outside_document", b"\n")


def _discarded_arg_spans(root: Root, node: AstNode, ctx: DocumentContext, path: str) -> list[IrrelevantSpan]:
    sig = ctx.discarding.get(node.name or "")
    if sig is None:
        return []
    if ctx.safe_use_files is not None and path not in ctx.safe_use_files:
        return []
    if path == sig.file and node.span.start < sig.defined_at:
        return []
    if any(a.kind in ("command_definition", "error") for a in node.ancestors()):
        return []
    nargs, unused = sig.nargs, sig.unused
    groups = _next_sibling_groups(root, node, nargs)
    if groups is None:
        return []
    out = []
    for k in sorted(unused):
        g = groups[k - 1]
        if g.kind != "group" or len(g.span) <= 2:
            continue
        inner = Span(g.span.start + 1, g.span.end - 1, g.span.line)
        out.append(IrrelevantSpan(path, inner, "discarded_command_argument", b""))
    return out


def find_irrelevant_spans(root: Root, context: DocumentContext | None = None) -> list[IrrelevantSpan]:
    """All removable spans of one parsed file, non-overlapping and sorted.

    Nothing inside or touching an error region is reported.
    """
    ctx = context if context is not None else standalone_context(root)
    path = root.file.path
    data = root.source
    cands: list[IrrelevantSpan] = []
    whole: list[Span] = []
    for node in root.walk():
        kind = node.kind
        if kind == "line_comment":
            span, repl = edit_for_line_comment(data, node.span)
            if data[span.start:span.end] != repl:
                cands.append(IrrelevantSpan(path, span, "line_comment", repl))
        elif kind == "environment" and node.name in ctx.comment_envs | ctx.excluded_envs:
            mech = "comment_environment" if node.name in ctx.comment_envs else "special_environment_text"
            found = _comment_env_span(root, node, path, mech)
            if found is not None:
                cands.append(found)
            else:
                ctx.notes.append(f"{path}:{node.span.line}: {node.name} environment not on its own lines; kept")
        elif kind == "conditional":
            cands.extend(_conditional_spans(root, node, ctx, path, whole))
        elif kind == "command_use" and node.name in ctx.discarding:
            cands.extend(_discarded_arg_spans(root, node, ctx, path))
    cands.extend(_removed_constructs(data, whole, path))
    if ctx.is_root:
        tail = _after_document_span(root, path)
        if tail is not None:
            cands.append(tail)
    doc_end = _document_end(root)
    errors = [e.span for e in root.errors if e.span.end != doc_end]
    cands = [c for c in cands if not any(_touches(c.span, e) for e in errors)]
    return _resolve_overlaps(cands)


def _touches(a: Span, b: Span) -> bool:
    return a.start <= b.end and b.start <= a.end


def _resolve_overlaps(cands: list[IrrelevantSpan]) -> list[IrrelevantSpan]:
    cands.sort(key=lambda c: (c.span.start, -c.span.end))
    kept: list[IrrelevantSpan] = []
    for c in cands:
        if kept and c.span.start < kept[-1].span.end:
            continue
        if kept and c.span.start == kept[-1].span.end == c.span.end:
            continue
        kept.append(c)
    return kept


def standalone_context(root: Root) -> DocumentContext:
    """Context for a single file analysed on its own."""
    path = root.file.path
    is_root = _document_env(root) is not None or _document_end(root) is not None or \
        any(c.kind == "command_use" and c.name in ("documentclass", "documentstyle") for c in root.children)
    if is_root:
        return build_context({path: root}, [path])[path]
    # A lone fragment: its own top level acts as the preamble.
    ctx = build_context({path: root}, [], [path])[path]
    ctx.safe_use_files = None
    return ctx


# -- bbl inlining -------------------------------------------------------

def bibliography_commands(root: Root) -> list[tuple[Span, AstNode]]:
    out = []
    for node in root.walk():
        if node.kind == "command_use" and node.name == "bibliography":
            if any(a.kind in ("conditional", "command_definition", "error") for a in node.ancestors()):
                continue
            groups = _next_sibling_groups(root, node, 1)
            if groups:
                out.append((Span(node.span.start, groups[0].span.end, node.span.line), node))
    return out


def matching_bbl(root_path: str, files: Iterable[str]) -> str | None:
    stem = posixpath.splitext(posixpath.basename(root_path))[0]
    cand = stem + ".bbl"
    return cand if cand in set(files) else None


def inline_bbl(root: Root, bbl: bytes) -> tuple[bytes, list[Span]]:
    """Replace each ``\\bibliography{...}`` with the bbl contents."""
    cmds = bibliography_commands(root)
    if not cmds:
        return root.source, []
    body = bbl[:-1] if bbl.endswith(b"\n") else bbl
    edits = [(span, body) for span, _ in cmds]
    return apply_edits(root.source, edits), [span for span, _ in cmds]


# -- plans --------------------------------------------------------------

@dataclass(frozen=True)
class FileRemoval:
    path: str
    evidence: str


@dataclass(frozen=True)
class BblInline:
    root: str
    bbl: str
    spans: tuple[Span, ...]


@dataclass
class CleanPlan:
    """What a clean run will do to a bundle.

    Span offsets for files listed in ``bbl_inlines`` refer to the text after
    the bibliography was inlined.
    """

    file_removals: list[FileRemoval] = field(default_factory=list)
    span_edits: dict[str, list[IrrelevantSpan]] = field(default_factory=dict)
    bbl_inlines: list[BblInline] = field(default_factory=list)
    source_hashes: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def mechanism_counts(self) -> dict[str, int]:
        counts = dict.fromkeys(MECHANISMS, 0)
        for spans in self.span_edits.values():
            for s in spans:
                counts[s.mechanism] += 1
        return counts


@dataclass
class ContentStage:
    """Rewritten text for each TeX file that changes."""

    texts: dict[str, bytes]
    span_edits: dict[str, list[IrrelevantSpan]]
    bbl_inlines: list[BblInline]
    notes: list[str]


def preamble_includes(trees: Mapping[str, Root], roots: Iterable[str], files: Iterable[str]) -> set[str]:
    """Bundle files pulled in (transitively) before a root's ``\\begin{document}``."""
    files = list(files)
    pool = set(files)
    out: set[str] = set()
    todo: list[str] = []
    for r in roots:
        tree = trees.get(r)
        if tree is None:
            continue
        for cmd, target, node in include_references(tree):
            if _static_position(node) == "preamble" or _static_position(node) is None and \
                    _document_env_ancestor(node) is None:
                resolved = resolve_tex_target(target, pool)
                if resolved:
                    todo.append(resolved)
        for name_node in tree.walk():
            if name_node.kind == "command_use" and name_node.name == "usepackage":
                groups = _next_sibling_groups(tree, name_node, 1)
                if groups:
                    for pkg in tree.text_of(groups[0])[1:-1].decode("latin-1").split(","):
                        cand = pkg.strip() + ".sty"
                        if cand in pool:
                            todo.append(cand)
    while todo:
        p = todo.pop()
        if p in out:
            continue
        out.add(p)
        tree = trees.get(p)
        if tree is None:
            continue
        for _cmd, target, _node in include_references(tree):
            resolved = resolve_tex_target(target, pool)
            if resolved:
                todo.append(resolved)
    return out


def _document_env_ancestor(node: AstNode) -> AstNode | None:
    for anc in node.ancestors():
        if anc.kind == "environment" and anc.name == "document":
            return anc
    return None


def _load_trees(bundle: SubmissionBundle, paths: Iterable[str], opaque: frozenset[str]) -> dict[str, Root]:
    trees: dict[str, Root] = {}
    for p in paths:
        data = bundle.read(p)
        enc = detect_encoding(data)
        if enc == "binary":
            continue
        trees[p] = parse(SourceFile(p, data, enc), verbatim_envs=DEFAULT_VERBATIM_ENVS,
                         opaque_envs=DEFAULT_OPAQUE_ENVS | opaque)
    return trees


def plan_content(
    bundle: SubmissionBundle,
    targets: Iterable[str],
    roots: Iterable[str],
    *,
    inline_bibliography: bool = True,
) -> ContentStage:
    """Compute span edits (and bbl inlines) for the given TeX files."""
    roots = list(roots)
    targets = [t for t in targets if t.lower().endswith(CLEANABLE_EXTENSIONS)]
    context_paths = sorted(set(bundle.tex_files()) | set(targets) |
                           {p for p in bundle.paths() if p.endswith(".sty")})
    trees = _load_trees(bundle, context_paths, frozenset())
    preamble = preamble_includes(trees, roots, bundle.paths())
    contexts = build_context(trees, roots, preamble)
    excluded = next(iter(contexts.values())).excluded_envs if contexts else frozenset()
    if excluded:
        trees = _load_trees(bundle, context_paths, excluded)
        preamble = preamble_includes(trees, roots, bundle.paths())
        contexts = build_context(trees, roots, preamble)
    texts: dict[str, bytes] = {}
    edits: dict[str, list[IrrelevantSpan]] = {}
    inlines: list[BblInline] = []
    notes: list[str] = []
    if contexts:
        notes.extend(next(iter(contexts.values())).notes)
    for path in sorted(set(targets)):
        tree = trees.get(path)
        if tree is None:
            notes.append(f"{path}: binary, not cleaned")
            continue
        ctx = contexts[path]
        ctx.notes = []
        data = tree.source
        if inline_bibliography and path in roots:
            bbl = matching_bbl(path, bundle.files)
            cmds = bibliography_commands(tree)
            if cmds and bbl is None:
                notes.append(f"{path}: no .bbl for \\bibliography; left as is")
            elif cmds and bbl is not None:
                data, spans = inline_bbl(tree, bundle.read(bbl))
                inlines.append(BblInline(path, bbl, tuple(spans)))
                tree = parse(SourceFile(path, data, detect_encoding(data)),
                             opaque_envs=DEFAULT_OPAQUE_ENVS | ctx.excluded_envs)
        if tree.errors:
            notes.append(f"{path}: parsed with {len(tree.errors)} error region(s); nearby content kept")
        spans = find_irrelevant_spans(tree, ctx)
        notes.extend(ctx.notes)
        if spans:
            edits[path] = spans
        new = apply_edits(data, [(s.span, s.replacement) for s in spans])
        if new != tree.source or data != bundle.read(path):
            texts[path] = new
    return ContentStage(texts, edits, inlines, notes)


def make_plan(
    bundle: SubmissionBundle,
    classes: Mapping[str, Classification],
    roots: Iterable[str],
    content: ContentStage | None = None,
    *,
    keep_dangling: bool = False,
) -> CleanPlan:
    """Assemble a CleanPlan from verdicts and an optional content stage."""
    plan = CleanPlan()
    if not keep_dangling:
        plan.file_removals = [
            FileRemoval(p, c.evidence) for p, c in sorted(classes.items()) if c.verdict == "dangling"
        ]
    if content is not None:
        required = {p for p, c in classes.items() if c.verdict == "required"}
        plan.span_edits = {p: s for p, s in content.span_edits.items() if p in required}
        plan.bbl_inlines = [b for b in content.bbl_inlines if b.root in required]
        plan.notes.extend(content.notes)
    touched = set(plan.span_edits) | {b.root for b in plan.bbl_inlines} | {r.path for r in plan.file_removals}
    plan.source_hashes = {p: bundle.files[p].sha256 for p in sorted(touched)}
    return plan


def rewrite_file(original: bytes, path: str, plan: CleanPlan, read: Callable[[str], bytes] | None = None) -> bytes:
    """Apply a plan's content edits for one file: bbl inlining, then spans."""
    data = original
    for inline in plan.bbl_inlines:
        if inline.root == path and read is not None:
            bbl = read(inline.bbl)
            body = bbl[:-1] if bbl.endswith(b"\n") else bbl
            data = apply_edits(data, [(s, body) for s in inline.spans])
    spans = plan.span_edits.get(path, [])
    return apply_edits(data, [(s.span, s.replacement) for s in spans])


def check_fresh(bundle: SubmissionBundle, plan: CleanPlan) -> list[str]:
    """Paths whose content no longer matches the plan."""
    stale = []
    for path, digest in plan.source_hashes.items():
        entry = bundle.files.get(path)
        if entry is None or entry.sha256 != digest:
            stale.append(path)
    return stale


def text_hash(data: bytes) -> str:
    return sha256_bytes(data)


def stage_plan(bundle: SubmissionBundle, plan: CleanPlan, stage: Path) -> Path:
    """Write the bundle with ``plan`` applied into the empty directory ``stage``.

    File removals are skipped, content edits applied; everything else is
    copied with its modification time.
    """
    stale = check_fresh(bundle, plan)
    if stale:
        raise StalePlan(f"bundle changed since planning: {', '.join(stale)}")
    removed = {r.path for r in plan.file_removals}
    rewritten = set(plan.span_edits) | {b.root for b in plan.bbl_inlines}
    for path in bundle.paths():
        if path in removed:
            continue
        src = bundle.abspath(path)
        target = stage / path
        target.parent.mkdir(parents=True, exist_ok=True)
        if path in rewritten:
            target.write_bytes(rewrite_file(bundle.read(path), path, plan, bundle.read))
            st = src.stat()
            os.utime(target, ns=(st.st_atime_ns, st.st_mtime_ns))
        else:
            shutil.copy2(src, target)
    return stage


def apply_plan(bundle: SubmissionBundle, plan: CleanPlan, out: str | Path, *, overwrite: bool = False) -> Path:
    """Materialize ``plan`` as a new directory or archive at ``out``.

    The original bundle is never modified; output appears atomically.
    """
    out = Path(out)
    if is_inside(out, bundle.root_dir):
        raise WriteFailure(f"{out} lies inside the input bundle")
    stage = make_stage(out)
    try:
        stage_plan(bundle, plan, stage)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    return publish(stage, out, overwrite=overwrite)
