"""Submission bundles: ingesting directories and archives, 00README handling
and root-file detection."""

from __future__ import annotations

import gzip
import hashlib
import os
import posixpath
import re
import shutil
import stat
import tarfile
import tempfile
import time
import zipfile
import zlib
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import CorruptArchive, EmptyBundle, NoRootFound, UnsafePath
from .latex_ast import AstNode, Root, detect_encoding, looks_binary, parse, SourceFile

TEX_EXTENSIONS = (".tex", ".ltx", ".latex")
README_RE = re.compile(r"^00README(\.[A-Za-z0-9]+)?$")
ANC_DIR = "anc"

INCLUDE_COMMANDS = frozenset({"input", "include", "subfile", "InputIfFileExists", "@input", "includeonly"})
IMPORT_COMMANDS = frozenset({"import", "subimport", "inputfrom", "subinputfrom", "includefrom", "subincludefrom"})

_LEGACY_VERBS = {
    "toplevelfile": "toplevelfile",
    "toplevel": "toplevelfile",
    "ignore": "ignore",
    "include": "include",
}
_YAML_USAGE = {
    "toplevel": "toplevelfile",
    "toplevelfile": "toplevelfile",
    "ignore": "ignore",
    "include": "include",
}


@dataclass(frozen=True)
class FileEntry:
    path: str
    size: int
    mtime: float
    sha256: str


@dataclass(frozen=True)
class ReadmeDirective:
    file: str
    action: str  # include | ignore | toplevelfile | other
    raw: str


@dataclass
class SubmissionBundle:
    """An immutable view of a submission's files.

    ``root_dir`` is a directory holding the files. For archive origins it is a
    private extraction directory that ``close()`` removes.
    """

    origin: str
    root_dir: Path
    files: dict[str, FileEntry]
    readme: list[ReadmeDirective] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    owns_dir: bool = False

    def __enter__(self) -> SubmissionBundle:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def close(self) -> None:
        if self.owns_dir and self.root_dir.exists():
            shutil.rmtree(self.root_dir, ignore_errors=True)

    def paths(self) -> list[str]:
        return sorted(self.files)

    def abspath(self, path: str) -> Path:
        return self.root_dir / path

    def read(self, path: str) -> bytes:
        return (self.root_dir / path).read_bytes()

    def is_text(self, path: str) -> bool:
        return not looks_binary(self.read(path)[:65536])

    def source(self, path: str) -> SourceFile:
        data = self.read(path)
        return SourceFile(path, data, detect_encoding(data))

    def content_hash(self) -> str:
        """Digest over sorted (path, sha256) pairs; independent of timestamps."""
        h = hashlib.sha256()
        for path in sorted(self.files):
            h.update(path.encode("utf-8", "surrogateescape"))
            h.update(b"\0")
            h.update(self.files[path].sha256.encode("ascii"))
            h.update(b"\n")
        return h.hexdigest()

    def tex_files(self) -> list[str]:
        return [p for p in self.paths() if p.lower().endswith(TEX_EXTENSIONS)]

    def readme_files(self) -> list[str]:
        return [p for p in self.paths() if "/" not in p and README_RE.match(p)]

    def directive_paths(self, action: str) -> list[str]:
        return [d.file for d in self.readme if d.action == action and d.file in self.files]

    def anc_paths(self) -> list[str]:
        return [p for p in self.paths() if p.split("/", 1)[0] == ANC_DIR and "/" in p]

    def copy_to(self, dest: Path, exclude: Iterable[str] = ()) -> None:
        """Copy the bundle's files into ``dest`` (created if needed)."""
        skip = set(exclude)
        dest.mkdir(parents=True, exist_ok=True)
        for path in self.paths():
            if path in skip:
                continue
            target = dest / path
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(self.root_dir / path, target)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _safe_relpath(name: str) -> str:
    """Normalize an archive member name, rejecting escapes from the root."""
    raw = name.replace("\\", "/")
    if raw.startswith("/") or re.match(r"^[A-Za-z]:", raw):
        raise UnsafePath(f"absolute path in bundle: {name!r}")
    norm = posixpath.normpath(raw)
    if norm in (".", ""):
        return ""
    if norm == ".." or norm.startswith("../"):
        raise UnsafePath(f"path escapes bundle root: {name!r}")
    return norm


def _entry(root: Path, rel: str) -> FileEntry:
    p = root / rel
    st = p.stat()
    digest = hashlib.sha256()
    with open(p, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return FileEntry(rel, st.st_size, st.st_mtime, digest.hexdigest())


def _scan_dir(root: Path) -> Iterator[str]:
    real_root = root.resolve()
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        for d in list(dirnames):
            full = Path(dirpath) / d
            if full.is_symlink():
                target = full.resolve()
                if not target.is_relative_to(real_root):
                    raise UnsafePath(f"symlink escapes bundle root: {full}")
                dirnames.remove(d)
        for f in filenames:
            full = Path(dirpath) / f
            rel = full.relative_to(root).as_posix()
            if full.is_symlink():
                target = full.resolve()
                if not target.is_relative_to(real_root):
                    raise UnsafePath(f"symlink escapes bundle root: {rel}")
            mode = full.stat().st_mode
            if stat.S_ISREG(mode):
                yield rel


def from_directory(root: Path, origin: str | None = None, owns_dir: bool = False) -> SubmissionBundle:
    """Inventory an existing directory without copying it."""
    root = Path(root)
    files = {rel: _entry(root, rel) for rel in sorted(_scan_dir(root))}
    if not files:
        raise EmptyBundle(str(origin or root))
    bundle = SubmissionBundle(str(origin or root), root, files, owns_dir=owns_dir)
    bundle.readme, bundle.warnings = parse_readmes(bundle)
    return bundle


def _extract_tar(src: Path, dest: Path) -> None:
    try:
        tf = tarfile.open(src, "r:*")
    except (tarfile.TarError, OSError) as exc:
        raise CorruptArchive(f"{src}: {exc}") from exc
    with tf:
        try:
            members = tf.getmembers()
        except (tarfile.TarError, EOFError, OSError) as exc:
            raise CorruptArchive(f"{src}: {exc}") from exc
        for m in members:
            rel = _safe_relpath(m.name)
            if not rel:
                continue
            if m.issym() or m.islnk():
                link = posixpath.normpath(posixpath.join(posixpath.dirname(rel), m.linkname)) \
                    if m.issym() else posixpath.normpath(m.linkname)
                if link.startswith("../") or link == ".." or m.linkname.startswith("/"):
                    raise UnsafePath(f"link escapes bundle root: {m.name!r}")
                continue
            target = dest / rel
            if m.isdir():
                target.mkdir(parents=True, exist_ok=True)
                continue
            if not m.isfile():
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            fh = tf.extractfile(m)
            if fh is None:
                continue
            try:
                target.write_bytes(fh.read())
            except (tarfile.TarError, EOFError, OSError, zlib.error) as exc:
                raise CorruptArchive(f"{src}: {exc}") from exc
            os.utime(target, (m.mtime, m.mtime))


def _extract_zip(src: Path, dest: Path) -> None:
    try:
        zf = zipfile.ZipFile(src)
    except (zipfile.BadZipFile, OSError) as exc:
        raise CorruptArchive(f"{src}: {exc}") from exc
    with zf:
        for info in zf.infolist():
            rel = _safe_relpath(info.filename)
            if not rel:
                continue
            mode = info.external_attr >> 16
            if stat.S_ISLNK(mode):
                continue
            target = dest / rel
            if info.is_dir():
                target.mkdir(parents=True, exist_ok=True)
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            try:
                target.write_bytes(zf.read(info))
            except (zipfile.BadZipFile, OSError, zlib.error) as exc:
                raise CorruptArchive(f"{src}: {exc}") from exc
            ts = time.mktime(info.date_time + (0, 0, -1))
            os.utime(target, (ts, ts))


def ingest(origin: str | os.PathLike[str]) -> SubmissionBundle:
    """Load a submission from a directory, tar(.gz) or zip archive."""
    src = Path(origin)
    if src.is_dir():
        return from_directory(src, str(src))
    if not src.is_file():
        raise FileNotFoundError(str(src))
    dest = Path(tempfile.mkdtemp(prefix="texscrub-bundle-"))
    try:
        head = src.read_bytes()[:512]
        if zipfile.is_zipfile(src):
            _extract_zip(src, dest)
        elif _is_tar(src):
            _extract_tar(src, dest)
        elif head[:2] == b"\x1f\x8b":
            # A single gzip-compressed source file.
            try:
                data = gzip.decompress(src.read_bytes())
            except (OSError, EOFError) as exc:
                raise CorruptArchive(f"{src}: {exc}") from exc
            name = src.name[:-3] if src.name.endswith(".gz") else src.name + ".out"
            if "." not in name:
                name += ".tex"
            (dest / name).write_bytes(data)
        else:
            raise CorruptArchive(f"{src}: not a directory, tar or zip archive")
        return from_directory(dest, str(src), owns_dir=True)
    except BaseException:
        shutil.rmtree(dest, ignore_errors=True)
        raise


def _is_tar(src: Path) -> bool:
    try:
        return tarfile.is_tarfile(src)
    except (OSError, EOFError, tarfile.TarError):
        return False


# -- 00README -----------------------------------------------------------

def parse_readme_text(text: str) -> tuple[list[ReadmeDirective], list[str]]:
    """Parse either the YAML or the legacy line-oriented 00README dialect."""
    warnings: list[str] = []
    data: object = None
    if re.search(r"^\s*(sources|process)\s*:", text, re.M):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            warnings.append(f"00README: invalid YAML ({exc.__class__.__name__})")
    if isinstance(data, dict):
        return _yaml_directives(data, warnings), warnings
    out: list[ReadmeDirective] = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) >= 2 and parts[-1].lower() in _LEGACY_VERBS:
            out.append(ReadmeDirective(" ".join(parts[:-1]), _LEGACY_VERBS[parts[-1].lower()], line))
        else:
            warnings.append(f"00README: unrecognized directive {stripped!r}")
            out.append(ReadmeDirective(parts[0] if len(parts) > 1 else "", "other", line))
    return out, warnings


def _yaml_directives(data: dict[str, object], warnings: list[str]) -> list[ReadmeDirective]:
    out: list[ReadmeDirective] = []
    sources = data.get("sources") or []
    if not isinstance(sources, list):
        warnings.append("00README: 'sources' is not a list")
        sources = []
    for item in sources:
        if not isinstance(item, dict) or "filename" not in item:
            warnings.append(f"00README: malformed source entry {item!r}")
            continue
        usage = str(item.get("usage", "")).lower()
        action = _YAML_USAGE.get(usage, "other")
        if action == "other":
            warnings.append(f"00README: unrecognized usage {usage!r} for {item['filename']!r}")
        out.append(ReadmeDirective(str(item["filename"]), action, yaml.safe_dump(item).strip()))
    for key, value in data.items():
        if key != "sources":
            out.append(ReadmeDirective("", "other", f"{key}: {value}"))
    return out


def parse_readmes(bundle: SubmissionBundle) -> tuple[list[ReadmeDirective], list[str]]:
    directives: list[ReadmeDirective] = []
    warnings: list[str] = []
    for name in bundle.readme_files():
        raw = bundle.read(name)
        text = raw.decode("utf-8", errors="replace")
        found, warn = parse_readme_text(text)
        directives.extend(found)
        warnings.extend(warn)
    for d in directives:
        if d.file and d.action != "other" and d.file not in bundle.files:
            warnings.append(f"00README names missing file {d.file!r}")
    return directives, warnings


# -- includes and roots -------------------------------------------------

def _next_group_text(root: Root, node: AstNode) -> tuple[str, AstNode] | None:
    """Text of the braced group that follows ``node`` among its siblings."""
    parent = node.parent
    if parent is None:
        return None
    siblings = parent.children
    i = siblings.index(node) + 1
    while i < len(siblings) and siblings[i].kind == "text" and not root.text_of(siblings[i]).strip():
        i += 1
    if i < len(siblings) and siblings[i].kind == "group":
        raw = root.text_of(siblings[i])[1:-1]
        return raw.decode("latin-1").strip(), siblings[i]
    if i < len(siblings) and siblings[i].kind == "text" and node.name == "input":
        # Plain TeX syntax: \input file
        m = re.match(rb"\s*([^\s{}%\\]+)", root.text_of(siblings[i]))
        if m:
            return m.group(1).decode("latin-1"), siblings[i]
    return None


def _following_groups(root: Root, node: AstNode, count: int) -> list[str] | None:
    parent = node.parent
    if parent is None:
        return None
    siblings = parent.children
    i = siblings.index(node) + 1
    out: list[str] = []
    while i < len(siblings) and len(out) < count:
        sib = siblings[i]
        if sib.kind == "text" and not root.text_of(sib).strip():
            i += 1
            continue
        if sib.kind != "group":
            return None
        out.append(root.text_of(sib)[1:-1].decode("latin-1").strip())
        i += 1
    return out if len(out) == count else None


def include_references(root: Root) -> list[tuple[str, str, AstNode]]:
    """(command, target, node) for every file-inclusion command in the tree."""
    refs: list[tuple[str, str, AstNode]] = []
    for node in root.walk():
        if node.kind != "command_use" or node.name is None:
            continue
        if node.name in INCLUDE_COMMANDS and node.name != "includeonly":
            found = _next_group_text(root, node)
            if found:
                refs.append((node.name, found[0], node))
        elif node.name in IMPORT_COMMANDS:
            groups = _following_groups(root, node, 2)
            if groups:
                refs.append((node.name, posixpath.join(groups[0], groups[1]), node))
    return refs


def resolve_tex_target(target: str, files: Iterable[str], base: str = "") -> str | None:
    """Map an \\input-style target onto a bundle path."""
    pool = set(files)
    target = target.strip().strip('"')
    if not target:
        return None
    candidates = []
    for prefix in ([base] if base else []) + [""]:
        joined = posixpath.normpath(posixpath.join(prefix, target)) if prefix else posixpath.normpath(target)
        candidates.extend([joined + ".tex", joined])
    for cand in candidates:
        if cand in pool:
            return cand
    return None


def has_documentclass(root: Root) -> bool:
    return any(
        leaf.kind == "command_use" and leaf.name in ("documentclass", "documentstyle")
        for leaf in root.leaves()
    )


def parse_tree(bundle: SubmissionBundle, path: str) -> Root | None:
    sf = bundle.source(path)
    if sf.encoding == "binary":
        return None
    return parse(sf)


def detect_roots(bundle: SubmissionBundle, override: str | None = None) -> list[str]:
    """Top-level files to compile, sorted lexicographically.

    Explicit ``toplevelfile`` directives win; otherwise a TeX file with a
    document class is a root unless another bundle file includes it.
    """
    if override is not None:
        rel = _safe_relpath(override)
        if rel not in bundle.files:
            raise NoRootFound(f"requested root {override!r} is not in the bundle")
        return [rel]
    ignored = set(bundle.directive_paths("ignore"))
    explicit = [p for p in bundle.directive_paths("toplevelfile") if p not in ignored]
    if explicit:
        return sorted(set(explicit))
    trees: dict[str, Root] = {}
    for path in bundle.tex_files():
        if path in ignored or path.split("/", 1)[0] == ANC_DIR:
            continue
        tree = parse_tree(bundle, path)
        if tree is not None:
            trees[path] = tree
    candidates = {p for p, t in trees.items() if has_documentclass(t)}
    included: set[str] = set()
    for path, tree in trees.items():
        for cmd, target, _node in include_references(tree):
            resolved = resolve_tex_target(target, bundle.files)
            if resolved and resolved != path:
                included.add(resolved)
    roots = sorted(candidates - included)
    if not roots:
        raise NoRootFound(bundle.origin)
    return roots
