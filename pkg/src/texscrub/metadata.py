"""Metadata extraction, classification and stripping for payload files."""

from __future__ import annotations

import os
import re
import shlex
import shutil
import subprocess
import sys
import tempfile
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

from . import metadata_backend
from .errors import BackendMissing, UnsupportedType

SENSITIVE_CLASSES = ("none", "username", "software", "email", "hardware", "gps", "timestamp")
DEFAULT_EPOCH = 946684800  # 2000-01-01T00:00:00Z

# Keys needed to render a file correctly; they survive stripping.
STRUCTURAL_KEYS: frozenset[str] = frozenset(
    {
        "ImageWidth", "ImageHeight", "BitDepth", "ColorType", "ColorSpace", "ICCProfile",
        "JFIFVersion", "AdobeTransform", "Resolution", "tRNS", "gAMA", "cHRM", "sRGB", "sBIT",
        "bKGD", "PDFVersion", "PageCount",
    }
)

_EMAIL = re.compile(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}")
_USER_KEYS = re.compile(
    r"(?i)^(?:author|artist|by-?line|owner ?name|camera ?owner ?name|xpauthor|last ?modified ?by|"
    r"copyright|rights|xmp-dc:creator|xmp-dc:rights|xmp-pdf:author|xmp-xmpRights:Owner|"
    r"xmp-photoshop:AuthorsPosition)$"
)
_SOFTWARE_KEYS = re.compile(
    r"(?i)^(?:software|producer|creator|creatortool|xmp-xmp:CreatorTool|xmp-pdf:Producer|"
    r"processingsoftware|hostcomputer|xmp-stEvt:softwareAgent|ptex\.fullbanner|Exif0x[0-9A-F]{4}Software)$"
)
_HARDWARE_KEYS = re.compile(
    r"(?i)^(?:make|model|lens ?make|lens ?model|lens ?serial ?number|body ?serial ?number|"
    r"camera ?serial ?number|serial ?number|internal ?serial ?number|xmp-aux:SerialNumber|"
    r"xmp-aux:Lens|xmp-tiff:Make|xmp-tiff:Model)$"
)
_TIME_KEYS = re.compile(r"(?i)(?:date|time)(?:stamp)?(?:original|digitized)?$|^tIME$|^ModDate$|^CreationDate$")


@dataclass(frozen=True)
class MetadataRecord:
    file: str
    key: str
    value: str
    sensitive_class: str = "none"

    @property
    def structural(self) -> bool:
        return self.key in STRUCTURAL_KEYS


def classify_key(key: str, value: str) -> str:
    """Sensitive class of one metadata pair; a pure function of its inputs."""
    if key in STRUCTURAL_KEYS:
        return "none"
    if key.upper().startswith("GPS") or "GPS" in key or key.startswith("XMP-exif:GPS"):
        return "gps"
    if _EMAIL.search(value) or "email" in key.lower():
        return "email"
    if _USER_KEYS.match(key):
        return "username"
    if _SOFTWARE_KEYS.match(key):
        return "software"
    if _HARDWARE_KEYS.match(key):
        return "hardware"
    if _TIME_KEYS.search(key):
        return "timestamp"
    return "none"


class MetadataBackend(Protocol):
    name: str

    def extract(self, path: Path) -> list[tuple[str, str]]: ...

    def strip(self, src: Path, dst: Path) -> list[str]: ...


class BuiltinBackend:
    """The reference backend, called in-process."""

    name = "builtin"

    def extract(self, path: Path) -> list[tuple[str, str]]:
        try:
            return metadata_backend.extract(Path(path).read_bytes())
        except metadata_backend.Unsupported as exc:
            raise UnsupportedType(f"{path}: {exc}") from exc

    def strip(self, src: Path, dst: Path) -> list[str]:
        try:
            cleaned, removed = metadata_backend.strip(Path(src).read_bytes())
        except metadata_backend.Unsupported as exc:
            raise UnsupportedType(f"{src}: {exc}") from exc
        Path(dst).write_bytes(cleaned)
        return removed


class CommandBackend:
    """Any tool honouring the extract/strip subprocess contract.

    ``cmd`` is the command prefix; ``extract FILE`` or ``strip SRC DST`` is
    appended. Exit status 3 means unsupported type.
    """

    def __init__(self, cmd: str | list[str], timeout: float = 120.0) -> None:
        self.cmd = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        if not self.cmd:
            raise BackendMissing("empty metadata backend command")
        exe = self.cmd[0]
        if not (os.path.isabs(exe) and os.access(exe, os.X_OK)) and shutil.which(exe) is None:
            raise BackendMissing(f"metadata backend {exe!r} not found")
        self.name = Path(exe).name
        self.timeout = timeout

    def _run(self, *args: str) -> subprocess.CompletedProcess[str]:
        proc = subprocess.run(self.cmd + list(args), capture_output=True, text=True, timeout=self.timeout)
        if proc.returncode == metadata_backend.EXIT_UNSUPPORTED:
            raise UnsupportedType(proc.stderr.strip() or f"{args[-1]}: unsupported")
        if proc.returncode != 0:
            raise RuntimeError(f"metadata backend failed ({proc.returncode}): {proc.stderr.strip()}")
        return proc

    def extract(self, path: Path) -> list[tuple[str, str]]:
        out = []
        for line in self._run("extract", str(path)).stdout.splitlines():
            key, sep, value = line.partition("\t")
            if sep:
                out.append((key, value))
        return out

    def strip(self, src: Path, dst: Path) -> list[str]:
        return [k for k in self._run("strip", str(src), str(dst)).stdout.splitlines() if k]


def default_backend_cmd() -> list[str]:
    return [sys.executable, "-m", "texscrub.metadata_backend"]


def make_backend(cmd: str | list[str] | None = None) -> MetadataBackend:
    return CommandBackend(cmd) if cmd else BuiltinBackend()


@dataclass
class StripResult:
    path: str
    removed: list[str]
    changed: bool
    warning: str | None = None


def extract_metadata(path: str | Path, backend: MetadataBackend | None = None,
                     rel: str | None = None) -> list[MetadataRecord]:
    """Records for one file; an empty list for files without metadata.

    A backend failure on one file degrades to an empty list (the caller
    sees the warning through ``extract_metadata_checked``).
    """
    records, _warning = extract_metadata_checked(path, backend, rel)
    return records


def extract_metadata_checked(path: str | Path, backend: MetadataBackend | None = None,
                             rel: str | None = None) -> tuple[list[MetadataRecord], str | None]:
    backend = backend or BuiltinBackend()
    name = rel or str(path)
    try:
        pairs = backend.extract(Path(path))
    except UnsupportedType as exc:
        return [], f"{name}: {exc}"
    except (RuntimeError, subprocess.TimeoutExpired, OSError) as exc:
        return [], f"{name}: backend failed: {exc}"
    return [MetadataRecord(name, k, v, classify_key(k, v)) for k, v in pairs], None


def strip_metadata(path: str | Path, backend: MetadataBackend | None = None) -> tuple[bytes, list[str]]:
    """Cleaned bytes and removed keys; the file on disk is left alone.

    Raises UnsupportedType for formats the backend does not handle.
    """
    backend = backend or BuiltinBackend()
    src = Path(path)
    original = src.read_bytes()
    with tempfile.TemporaryDirectory(prefix="texscrub-meta-") as tmp:
        dst = Path(tmp) / ("clean" + src.suffix)
        removed = backend.strip(src, dst)
        cleaned = dst.read_bytes() if dst.exists() else original
    if not removed:
        return original, []
    return cleaned, removed


PAYLOAD_SUFFIXES = (".jpg", ".jpeg", ".png", ".pdf", ".svg", ".xml")


def is_payload(path: str) -> bool:
    return path.lower().endswith(PAYLOAD_SUFFIXES)


def strip_tree(root: Path, paths: Iterable[str], backend: MetadataBackend | None = None) -> list[StripResult]:
    """Strip metadata in place under ``root`` (a scratch output tree)."""
    results = []
    for rel in sorted(paths):
        target = root / rel
        try:
            cleaned, removed = strip_metadata(target, backend)
        except UnsupportedType as exc:
            results.append(StripResult(rel, [], False, f"unsupported: {exc}"))
            continue
        except (RuntimeError, subprocess.TimeoutExpired, OSError) as exc:
            results.append(StripResult(rel, [], False, f"backend failed: {exc}"))
            continue
        changed = bool(removed)
        if changed:
            st = target.stat()
            target.write_bytes(cleaned)
            os.utime(target, ns=(st.st_atime_ns, st.st_mtime_ns))
        results.append(StripResult(rel, removed, changed))
    return results


def normalize_timestamps(root: Path, epoch: int = DEFAULT_EPOCH) -> int:
    """Set every file's (and directory's) mtime to ``epoch``; returns the file count."""
    count = 0
    root = Path(root)
    for dirpath, dirnames, filenames in os.walk(root, topdown=False):
        for name in filenames:
            p = Path(dirpath) / name
            if not p.is_symlink():
                os.utime(p, (epoch, epoch))
                count += 1
        os.utime(dirpath, (epoch, epoch))
    return count


def unique_timestamps(mtimes: Iterable[float], epoch: int = DEFAULT_EPOCH) -> set[int]:
    return {int(m) for m in mtimes if int(m) != epoch}
