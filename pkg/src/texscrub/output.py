"""Atomic publication of a staged output tree as a directory or archive."""

from __future__ import annotations

import gzip
import io
import os
import shutil
import tarfile
import tempfile
import time
import zipfile
from pathlib import Path

from .errors import WriteFailure

ARCHIVE_SUFFIXES = (".tar.gz", ".tgz", ".tar", ".zip")


def archive_kind(path: Path) -> str | None:
    name = path.name.lower()
    for suffix in ARCHIVE_SUFFIXES:
        if name.endswith(suffix):
            return suffix.lstrip(".")
    return None


def make_stage(near: Path) -> Path:
    """A scratch directory on the same filesystem as ``near``."""
    parent = near.parent if near.parent.exists() else Path(tempfile.gettempdir())
    return Path(tempfile.mkdtemp(prefix=f".{near.name}.stage-", dir=parent))


def _members(stage: Path) -> list[Path]:
    return sorted((p for p in stage.rglob("*") if p.is_file()), key=lambda p: p.relative_to(stage).as_posix())


def _write_tar(stage: Path, fh: io.BufferedWriter | io.BytesIO, compress: bool, mtime: int | None) -> None:
    raw: io.BufferedWriter | io.BytesIO | gzip.GzipFile = fh
    gz = None
    if compress:
        gz = gzip.GzipFile(fileobj=fh, mode="wb", mtime=mtime or 0, filename="")
        raw = gz
    with tarfile.open(fileobj=raw, mode="w", format=tarfile.PAX_FORMAT) as tar:  # type: ignore[call-overload]
        for p in _members(stage):
            rel = p.relative_to(stage).as_posix()
            st = p.stat()
            info = tarfile.TarInfo(rel)
            info.size = st.st_size
            info.mtime = int(st.st_mtime if mtime is None else mtime)
            info.mode = 0o644
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            with p.open("rb") as src:
                tar.addfile(info, src)
    if gz is not None:
        gz.close()


def _write_zip(stage: Path, fh: io.BufferedWriter, mtime: int | None) -> None:
    with zipfile.ZipFile(fh, "w", zipfile.ZIP_DEFLATED) as zf:
        for p in _members(stage):
            rel = p.relative_to(stage).as_posix()
            t = int(p.stat().st_mtime if mtime is None else mtime)
            stamp = time.gmtime(max(t, 315532800))[:6]  # zip cannot encode dates before 1980
            info = zipfile.ZipInfo(rel, date_time=stamp)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, p.read_bytes())


def publish(stage: Path, out: Path, *, mtime: int | None = None, overwrite: bool = False) -> Path:
    """Move ``stage`` to ``out`` (or pack it there) in one rename.

    ``stage`` is consumed. With ``mtime`` set, archive entries carry that
    timestamp.
    """
    out = Path(out)
    kind = archive_kind(out)
    if out.exists() and not overwrite:
        if kind is not None or any(out.iterdir()):
            shutil.rmtree(stage, ignore_errors=True)
            raise WriteFailure(f"{out} already exists")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        if kind is None:
            if out.exists():
                old = out.with_name(f".{out.name}.old-{os.getpid()}")
                os.replace(out, old)
                os.replace(stage, out)
                shutil.rmtree(old, ignore_errors=True)
            else:
                os.replace(stage, out)
            return out
        fd, tmp_name = tempfile.mkstemp(prefix=f".{out.name}.", dir=out.parent)
        with os.fdopen(fd, "wb") as fh:
            if kind == "zip":
                _write_zip(stage, fh, mtime)
            else:
                _write_tar(stage, fh, kind in ("tar.gz", "tgz"), mtime)
        if mtime is not None:
            os.utime(tmp_name, (mtime, mtime))
        os.replace(tmp_name, out)
        shutil.rmtree(stage, ignore_errors=True)
        return out
    except OSError as exc:
        shutil.rmtree(stage, ignore_errors=True)
        raise WriteFailure(f"cannot write {out}: {exc}") from exc


def is_inside(child: Path, parent: Path) -> bool:
    try:
        Path(child).resolve().relative_to(Path(parent).resolve())
    except ValueError:
        return False
    return True
