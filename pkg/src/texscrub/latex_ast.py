"""Lossless syntax tree for LaTeX sources.

The parser works on raw bytes so that every offset is a byte offset and the
tree can be turned back into the exact input. TeX's special characters are
all ASCII, which makes byte-level lexing safe for both UTF-8 and Latin-1
sources.

Leaves tile the file: concatenating leaf spans in document order yields the
original bytes. Containers (groups, environments, conditionals, definitions
and error regions) only organize leaves.
"""

from __future__ import annotations

import bisect
import re
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field

from .errors import BinaryInput, OverlappingEdits

DEFAULT_VERBATIM_ENVS: frozenset[str] = frozenset(
    {"verbatim", "verbatim*", "lstlisting", "minted", "alltt", "filecontents", "filecontents*"}
)

# Environments whose bodies TeX never tokenizes normally.
DEFAULT_OPAQUE_ENVS: frozenset[str] = frozenset({"comment"})

LEAF_KINDS = frozenset({"text", "line_comment", "command_use", "escaped_char", "error"})
CONTAINER_KINDS = frozenset(
    {"root", "group", "environment", "conditional", "command_definition", "error"}
)

# Control words starting with "if" that are ordinary macros, not conditionals.
NON_CONDITIONAL_IFS: frozenset[str] = frozenset(
    {
        "ifthenelse", "ifdef", "ifundef", "ifcsdef", "ifcsundef", "ifdefmacro", "ifcsmacro",
        "ifdefparam", "ifcsparam", "ifdefprefix", "ifcsprefix", "ifdefprotected",
        "ifcsprotected", "ifdefltxprotect", "ifcsltxprotect", "ifdefempty", "ifcsempty",
        "ifdefvoid", "ifcsvoid", "ifdefequal", "ifcsequal", "ifdefstring", "ifcsstring",
        "ifdefstrequal", "ifcsstrequal", "ifdefcounter", "ifcscounter", "ifltxcounter",
        "ifdeflength", "ifcslength", "ifdefdimen", "ifcsdimen", "ifstrequal", "ifstrempty",
        "ifblank", "ifnumcomp", "ifnumequal", "ifnumgreater", "ifnumless", "ifnumodd",
        "ifdimcomp", "ifdimequal", "ifdimgreater", "ifdimless", "ifbool", "ifboolexpr",
        "ifboolexpe", "iftoggle", "ifinlist", "ifinlistcs", "ifrmnum", "ifpatchable",
        "ifstrmatch", "ifoot", "ifthispageodd", "ifthispagewasodd", "ifpdfstringunicode",
        "iflanguage", "ifnextchar",
    }
)

DEF_COMMANDS: frozenset[str] = frozenset(
    {
        "newcommand", "renewcommand", "providecommand", "DeclareRobustCommand",
        "newrobustcmd", "renewrobustcmd", "providerobustcmd",
    }
)
ENV_DEF_COMMANDS: frozenset[str] = frozenset(
    {"newenvironment", "renewenvironment", "provideenvironment"}
)
TEX_DEF_COMMANDS: frozenset[str] = frozenset({"def", "gdef", "edef", "xdef"})
XPARSE_DEF_COMMANDS: frozenset[str] = frozenset(
    {"NewDocumentCommand", "RenewDocumentCommand", "ProvideDocumentCommand", "DeclareDocumentCommand"}
)

# Commands whose (first) argument is read with comment characters disabled.
RAW_ARG_COMMANDS: frozenset[str] = frozenset({"url", "nolinkurl", "path", "href", "lstinline"})

_LETTERS = frozenset(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ@")
_BLANKS = b" \t"
_WS = b" \t\r\n"
_SPECIAL = re.compile(rb"[\\%{}]")
_ENV_NAME = re.compile(rb"[A-Za-z@*0-9:._\- ]+")
_MAX_RAW_ARG = 8192


@dataclass(frozen=True, order=True)
class Span:
    """Half-open byte range ``[start, end)``; ``line`` is the 1-based line of ``start``."""

    start: int
    end: int
    line: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return self.end - self.start

    def overlaps(self, other: Span) -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, other: Span) -> bool:
        return self.start <= other.start and other.end <= self.end


@dataclass
class SourceFile:
    """A file's bytes plus what the parser learned about them."""

    path: str
    data: bytes
    encoding: str
    parse_status: str = "ok"

    @property
    def text(self) -> str:
        if self.encoding == "binary":
            raise BinaryInput(self.path)
        return self.data.decode(self.encoding)


def looks_binary(data: bytes) -> bool:
    """Heuristic used throughout the package: NUL bytes mean binary."""
    return b"\x00" in data[:65536]


def detect_encoding(data: bytes) -> str:
    """UTF-8 when the bytes decode cleanly, Latin-1 otherwise, ``binary`` on NULs."""
    if looks_binary(data):
        return "binary"
    try:
        data.decode("utf-8")
    except UnicodeDecodeError:
        return "latin-1"
    return "utf-8"


def load_source(path: str, data: bytes, **parse_options: object) -> SourceFile:
    """Build a SourceFile and set its parse status by parsing it once."""
    enc = detect_encoding(data)
    sf = SourceFile(path=path, data=data, encoding=enc)
    if enc == "binary":
        sf.parse_status = "binary"
        return sf
    root = parse(sf, **parse_options)  # type: ignore[arg-type]
    sf.parse_status = "partial" if root.errors else "ok"
    return sf


class AstNode:
    """One node of the tree. Leaves have no children."""

    __slots__ = ("kind", "span", "children", "name", "attrs", "parent", "_no_env", "_pending")

    def __init__(
        self,
        kind: str,
        span: Span,
        children: list[AstNode] | None = None,
        name: str | None = None,
        attrs: dict[str, object] | None = None,
    ) -> None:
        self.kind = kind
        self.span = span
        self.children: list[AstNode] = children if children is not None else []
        self.name = name
        self.attrs: dict[str, object] = attrs if attrs is not None else {}
        self.parent: AstNode | None = None
        self._no_env = False
        self._pending = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children and self.kind in LEAF_KINDS

    def walk(self) -> Iterator[AstNode]:
        """Pre-order traversal without recursion."""
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> Iterator[AstNode]:
        for node in self.walk():
            if not node.children:
                yield node

    def ancestors(self) -> Iterator[AstNode]:
        node = self.parent
        while node is not None:
            yield node
            node = node.parent

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"AstNode({self.kind}{label} {self.span.start}:{self.span.end})"


class Root(AstNode):
    """Tree root; keeps the source bytes so the tree can be serialized."""

    __slots__ = ("source", "file", "errors", "_newlines")

    def __init__(self, file: SourceFile, span: Span) -> None:
        super().__init__("root", span)
        self.file = file
        self.source = file.data
        self.errors: list[AstNode] = []
        self._newlines: list[int] = []

    @property
    def status(self) -> str:
        return "partial" if self.errors else "ok"

    def line_of(self, offset: int) -> int:
        return bisect.bisect_right(self._newlines, offset - 1) + 1

    def text_of(self, node_or_span: AstNode | Span) -> bytes:
        span = node_or_span.span if isinstance(node_or_span, AstNode) else node_or_span
        return self.source[span.start:span.end]


def _skip(data: bytes, pos: int, chars: bytes) -> int:
    n = len(data)
    while pos < n and data[pos] in chars:
        pos += 1
    return pos


def _skip_ws(data: bytes, pos: int) -> int:
    """Skip whitespace but stop before a blank line (a paragraph break)."""
    n = len(data)
    newlines = 0
    while pos < n and data[pos] in _WS:
        if data[pos] == 0x0A:
            newlines += 1
            if newlines > 1:
                return pos
        pos += 1
    return pos


def _control_name_end(data: bytes, pos: int) -> int:
    """Given ``data[pos] == '\\'``, return the end of the control sequence."""
    n = len(data)
    j = pos + 1
    if j >= n:
        return j
    if data[j] in _LETTERS:
        while j < n and data[j] in _LETTERS:
            j += 1
        return j
    return j + 1


def _balanced(data: bytes, pos: int, open_: int, close: int, limit: int = _MAX_RAW_ARG) -> int:
    """Index just past the delimiter matching ``data[pos]``, or -1."""
    depth = 0
    n = min(len(data), pos + limit)
    j = pos
    while j < n:
        c = data[j]
        if c == 0x5C:
            j += 2
            continue
        if c == open_:
            depth += 1
        elif c == close:
            depth -= 1
            if depth == 0:
                return j + 1
        j += 1
    return -1


class _Parser:
    def __init__(
        self,
        file: SourceFile,
        verbatim_envs: frozenset[str],
        opaque_envs: frozenset[str],
    ) -> None:
        self.data = file.data
        self.n = len(self.data)
        self.root = Root(file, Span(0, self.n, 1))
        self.root._newlines = [m.start() for m in re.finditer(rb"\n", self.data)]
        self.raw_envs = verbatim_envs | opaque_envs
        self.stack: list[AstNode] = [self.root]
        self.text_start: int | None = None
        self.pos = 0

    # -- helpers -------------------------------------------------------
    def span(self, start: int, end: int) -> Span:
        return Span(start, end, self.root.line_of(start))

    def add(self, kind: str, start: int, end: int, name: str | None = None) -> AstNode:
        node = AstNode(kind, self.span(start, end), name=name)
        self.stack[-1].children.append(node)
        if kind == "error":
            self.root.errors.append(node)
        return node

    def flush(self, upto: int | None = None) -> None:
        if self.text_start is not None:
            end = self.pos if upto is None else upto
            if end > self.text_start:
                self.add("text", self.text_start, end)
            self.text_start = None

    def open(self, kind: str, start: int, name: str | None = None) -> AstNode:
        top = self.stack[-1]
        node = AstNode(kind, self.span(start, start), name=name)
        node._no_env = top._no_env or top.kind == "command_definition"
        top.children.append(node)
        self.stack.append(node)
        return node

    def close(self, node: AstNode, end: int, error: bool = False) -> None:
        assert self.stack[-1] is node
        self.stack.pop()
        node.span = Span(node.span.start, end, node.span.line)
        if error:
            node.attrs["unclosed_kind"] = node.kind
            node.kind = "error"
            self.root.errors.append(node)

    def no_env(self) -> bool:
        top = self.stack[-1]
        return top._no_env or top.kind == "command_definition"

    # -- main loop -----------------------------------------------------
    def run(self) -> Root:
        data, n = self.data, self.n
        while self.pos < n:
            m = _SPECIAL.search(data, self.pos)
            if m is None:
                if self.text_start is None:
                    self.text_start = self.pos
                self.pos = n
                break
            if m.start() > self.pos and self.text_start is None:
                self.text_start = self.pos
            self.pos = m.start()
            c = data[self.pos]
            if c == 0x5C:
                self.control()
            elif c == 0x25:
                self.flush()
                end = self.pos
                while end < n and data[end] not in b"\r\n":
                    end += 1
                self.add("line_comment", self.pos, end)
                self.pos = end
            elif c == 0x7B:
                self.flush()
                group = self.open("group", self.pos)
                group.children.append(AstNode("text", self.span(self.pos, self.pos + 1)))
                self.pos += 1
            else:
                self.flush()
                self.close_brace()
        self.flush()
        while len(self.stack) > 1:
            self.close(self.stack[-1], n, error=True)
        _group_conditionals(self.root)
        _link_parents(self.root)
        return self.root

    def close_brace(self) -> None:
        start = self.pos
        end = start + 1
        idx = len(self.stack) - 1
        while idx > 0 and self.stack[idx].kind == "environment":
            idx -= 1
        target = self.stack[idx]
        if idx == 0 or target.kind != "group":
            self.add("error", start, end, name="}")
            self.pos = end
            return
        while len(self.stack) - 1 > idx:
            self.close(self.stack[-1], start, error=True)
        target.children.append(AstNode("text", self.span(start, end)))
        self.close(target, end)
        self.pos = end
        parent = self.stack[-1]
        if parent.kind == "command_definition":
            parent._pending -= 1
            nxt = _skip_ws(self.data, end)
            if parent._pending > 0 and nxt < self.n and self.data[nxt] == 0x7B:
                if nxt > end:
                    self.add("text", end, nxt)
                self.pos = nxt
            else:
                self.close(parent, end)

    def control(self) -> None:
        data, n = self.data, self.n
        start = self.pos
        if start + 1 >= n:
            # A lone backslash at end of file is inert text.
            if self.text_start is None:
                self.text_start = start
            self.pos = n
            return
        self.flush()
        c = data[start + 1]
        if c not in _LETTERS:
            end = start + 2
            if c == 0x5C:
                self.add("command_use", start, end, name="\\")
            else:
                self.add("escaped_char", start, end, name=chr(c))
            self.pos = end
            return
        end = _control_name_end(data, start)
        name = data[start + 1:end].decode("ascii")
        if name == "verb" or name == "Verb":
            if self.verb(start, end, name):
                return
        elif name in RAW_ARG_COMMANDS:
            if self.raw_arg(start, end, name):
                return
        elif name in ("begin", "end") and not self.no_env():
            if self.environment(start, end, name):
                return
        elif name in DEF_COMMANDS or name in ENV_DEF_COMMANDS or name in XPARSE_DEF_COMMANDS:
            if self.latex_definition(start, end, name):
                return
        elif name in TEX_DEF_COMMANDS:
            if self.tex_definition(start, end, name):
                return
        self.add("command_use", start, end, name=name)
        self.pos = end

    # -- special commands ----------------------------------------------
    def verb(self, start: int, end: int, name: str) -> bool:
        data, n = self.data, self.n
        j = end
        if j < n and data[j] == 0x2A:
            j += 1
        if j >= n or data[j] in b" \t\r\n" or data[j] in _LETTERS:
            return False
        delim = data[j]
        k = j + 1
        while k < n and data[k] != delim and data[k] not in b"\r\n":
            k += 1
        if k >= n or data[k] != delim:
            return False
        self.add("command_use", start, k + 1, name=name)
        self.pos = k + 1
        return True

    def raw_arg(self, start: int, end: int, name: str) -> bool:
        data, n = self.data, self.n
        j = _skip(data, end, _BLANKS)
        if j < n and data[j] == 0x5B and name == "lstinline":
            k = _balanced(data, j, 0x5B, 0x5D)
            if k < 0:
                return False
            j = k
        if j >= n:
            return False
        if data[j] == 0x7B:
            k = _balanced(data, j, 0x7B, 0x7D)
            if k < 0:
                return False
            segment = data[j:k]
            if b"\n\n" in segment or b"\n\r\n" in segment:
                return False
        elif name in ("url", "nolinkurl", "path", "lstinline") and data[j] not in _LETTERS \
                and data[j] not in b" \t\r\n\\%":
            delim = data[j]
            k = j + 1
            while k < n and data[k] != delim and data[k] not in b"\r\n":
                k += 1
            if k >= n or data[k] != delim:
                return False
            k += 1
        else:
            return False
        self.add("command_use", start, k, name=name)
        self.pos = k
        return True

    def env_name(self, end: int) -> tuple[str, int] | None:
        data, n = self.data, self.n
        j = _skip_ws(data, end)
        if j >= n or data[j] != 0x7B:
            return None
        k = data.find(b"}", j + 1, j + 200)
        if k < 0:
            return None
        raw = data[j + 1:k]
        if not raw or not _ENV_NAME.fullmatch(raw):
            return None
        return raw.decode("ascii").strip(), k + 1

    def environment(self, start: int, end: int, which: str) -> bool:
        found = self.env_name(end)
        if found is None:
            return False
        name, close = found
        if which == "begin":
            if name in self.raw_envs:
                marker = b"\\end{" + name.encode("ascii") + b"}"
                k = self.data.find(marker, close)
                env = self.open("environment", start, name=name)
                env.children.append(AstNode("command_use", self.span(start, close), name="begin"))
                if k < 0:
                    if close < self.n:
                        env.children.append(AstNode("text", self.span(close, self.n)))
                    self.close(env, self.n, error=True)
                    self.pos = self.n
                    return True
                if k > close:
                    env.children.append(AstNode("text", self.span(close, k)))
                env.children.append(AstNode("command_use", self.span(k, k + len(marker)), name="end"))
                env.attrs["raw"] = True
                self.close(env, k + len(marker))
                self.pos = k + len(marker)
                return True
            env = self.open("environment", start, name=name)
            env.children.append(AstNode("command_use", self.span(start, close), name="begin"))
            self.pos = close
            return True
        # \end{name}: match the innermost open environment of that name
        # without crossing a group boundary.
        idx = len(self.stack) - 1
        while idx > 0 and self.stack[idx].kind == "environment":
            if self.stack[idx].name == name:
                break
            idx -= 1
        target = self.stack[idx]
        if idx == 0 or target.kind != "environment" or target.name != name:
            self.add("error", start, close, name="end")
            self.pos = close
            return True
        while len(self.stack) - 1 > idx:
            self.close(self.stack[-1], start, error=True)
        target.children.append(AstNode("command_use", self.span(start, close), name="end"))
        self.close(target, close)
        self.pos = close
        return True

    # -- definitions ---------------------------------------------------
    def _cs_at(self, j: int) -> tuple[str, int] | None:
        data, n = self.data, self.n
        if j >= n or data[j] != 0x5C or j + 1 >= n:
            return None
        k = _control_name_end(data, j)
        return data[j + 1:k].decode("latin-1"), k

    def latex_definition(self, start: int, end: int, definer: str) -> bool:
        data, n = self.data, self.n
        j = end
        if j < n and data[j] == 0x2A:
            j += 1
        j = _skip_ws(data, j)
        attrs: dict[str, object] = {"definer": definer, "nargs": 0, "optional": False}
        if definer in ENV_DEF_COMMANDS:
            found = self.env_name(j)
            if found is None:
                return False
            name, j = found
            bodies = 2
        else:
            if j < n and data[j] == 0x7B:
                inner = _skip_ws(data, j + 1)
                cs = self._cs_at(inner)
                if cs is None:
                    return False
                name, k = cs
                k = _skip_ws(data, k)
                if k >= n or data[k] != 0x7D:
                    return False
                j = k + 1
            else:
                cs = self._cs_at(j)
                if cs is None:
                    return False
                name, j = cs
            bodies = 1
        j = _skip_ws(data, j)
        if definer in XPARSE_DEF_COMMANDS:
            if j >= n or data[j] != 0x7B:
                return False
            k = _balanced(data, j, 0x7B, 0x7D, 512)
            if k < 0:
                return False
            argspec = data[j + 1:k - 1].replace(b" ", b"")
            attrs["nargs"] = len(argspec)
            attrs["optional"] = bool(argspec.strip(b"m"))
            j = _skip_ws(data, k)
        else:
            if j < n and data[j] == 0x5B:
                k = data.find(b"]", j, j + 16)
                if k < 0 or not data[j + 1:k].strip().isdigit():
                    return False
                attrs["nargs"] = int(data[j + 1:k].strip())
                j = _skip_ws(data, k + 1)
                if j < n and data[j] == 0x5B:
                    k = _balanced(data, j, 0x5B, 0x5D, 2048)
                    if k < 0:
                        return False
                    attrs["optional"] = True
                    j = _skip_ws(data, k)
        if j >= n or data[j] != 0x7B or b"%" in data[end:j]:
            return False
        self._start_definition(start, end, j, definer, name, attrs, bodies)
        return True

    def tex_definition(self, start: int, end: int, definer: str) -> bool:
        data, n = self.data, self.n
        j = _skip_ws(data, end)
        cs = self._cs_at(j)
        if cs is None:
            return False
        name, j = cs
        k = j
        limit = min(n, j + 256)
        while k < limit and data[k] not in b"{}%":
            k += 1
        if k >= limit or data[k] != 0x7B:
            return False
        params = data[j:k]
        simple = re.fullmatch(rb"\s*(?:#[1-9]\s*)*", params) is not None
        attrs: dict[str, object] = {
            "definer": definer,
            "nargs": len(re.findall(rb"#[1-9]", params)),
            "optional": False,
            "delimited": not simple,
        }
        self._start_definition(start, end, k, definer, name, attrs, 1)
        return True

    def _start_definition(
        self, start: int, end: int, body: int, definer: str, name: str,
        attrs: dict[str, object], bodies: int,
    ) -> None:
        node = self.open("command_definition", start, name=name)
        node.attrs.update(attrs)
        node._pending = bodies
        node.children.append(AstNode("command_use", self.span(start, end), name=definer))
        if body > end:
            node.children.append(AstNode("text", self.span(end, body)))
        self.pos = body


def _is_conditional_open(node: AstNode) -> bool:
    return (
        node.kind == "command_use"
        and node.name is not None
        and node.name.startswith("if")
        and node.name not in NON_CONDITIONAL_IFS
    )


def _group_conditionals(root: Root) -> None:
    """Wrap matched ``\\if... \\fi`` runs of siblings into conditional nodes."""
    for container in list(root.walk()):
        if not container.children or container.attrs.get("raw"):
            continue
        children = container.children
        if not any(ch.kind == "command_use" and ch.name == "fi" for ch in children):
            continue
        out: list[AstNode] = []
        opens: list[int] = []
        suppress = 0
        for child in children:
            if child.kind == "command_use":
                if suppress and child.name is not None:
                    suppress -= 1
                    out.append(child)
                    continue
                if child.name == "newif":
                    suppress = 1
                elif child.name == "let":
                    suppress = 2
            if _is_conditional_open(child):
                opens.append(len(out))
                out.append(child)
            elif child.kind == "command_use" and child.name == "fi" and opens:
                first = opens.pop()
                seq = out[first:] + [child]
                del out[first:]
                head = seq[0]
                out.append(
                    AstNode(
                        "conditional",
                        Span(head.span.start, child.span.end, head.span.line),
                        children=seq,
                        name=head.name,
                    )
                )
            else:
                out.append(child)
        container.children = out


def _link_parents(root: AstNode) -> None:
    for node in root.walk():
        for child in node.children:
            child.parent = node


def parse(
    file: SourceFile,
    *,
    verbatim_envs: Iterable[str] = DEFAULT_VERBATIM_ENVS,
    opaque_envs: Iterable[str] = DEFAULT_OPAQUE_ENVS,
) -> Root:
    """Parse a text SourceFile into a lossless tree.

    Raises BinaryInput for binary files. Malformed input never raises; the
    offending regions become ``error`` nodes and ``root.errors`` is non-empty.
    """
    if file.encoding == "binary" or looks_binary(file.data):
        raise BinaryInput(file.path)
    return _Parser(file, frozenset(verbatim_envs), frozenset(opaque_envs)).run()


def parse_bytes(data: bytes, path: str = "<memory>", **options: Iterable[str]) -> Root:
    """Convenience wrapper for parsing in-memory bytes."""
    return parse(SourceFile(path, data, detect_encoding(data)), **options)


Edit = tuple[Span, bytes]


def _normalize_edits(edits: Iterable[tuple[Span | Sequence[int], bytes]]) -> list[tuple[int, int, bytes]]:
    out: list[tuple[int, int, bytes]] = []
    for span, repl in edits:
        if isinstance(span, Span):
            start, end = span.start, span.end
        else:
            start, end = int(span[0]), int(span[1])
        if start > end:
            raise ValueError(f"inverted span {start}:{end}")
        out.append((start, end, bytes(repl)))
    out.sort(key=lambda e: (e[0], e[1]))
    for (s1, e1, _), (s2, e2, _) in zip(out, out[1:]):
        if s2 < e1 or (s1 == s2 and s1 == e1 and s2 == e2):
            raise OverlappingEdits(f"{s1}:{e1} overlaps {s2}:{e2}")
    return out


def apply_edits(data: bytes, edits: Iterable[tuple[Span | Sequence[int], bytes]]) -> bytes:
    """Replace each span of ``data`` by its bytes; spans must not overlap."""
    norm = _normalize_edits(edits)
    if norm and norm[-1][1] > len(data):
        raise ValueError("edit beyond end of data")
    parts: list[bytes] = []
    cursor = 0
    for start, end, repl in norm:
        parts.append(data[cursor:start])
        parts.append(repl)
        cursor = end
    parts.append(data[cursor:])
    return b"".join(parts)


def serialize(root: Root, edits: Iterable[tuple[Span | Sequence[int], bytes]] = ()) -> bytes:
    """Rebuild the file from its leaves, applying non-overlapping edits.

    With no edits the result equals the parsed bytes exactly.
    """
    edits = list(edits)
    if not edits:
        return b"".join(root.source[leaf.span.start:leaf.span.end] for leaf in root.leaves())
    return apply_edits(root.source, edits)
