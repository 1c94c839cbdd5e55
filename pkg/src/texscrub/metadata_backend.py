"""Reference metadata backend for JPEG, PNG, PDF and SVG/XML payloads.

Usable in-process or as a subprocess::

    python -m texscrub.metadata_backend extract FILE
    python -m texscrub.metadata_backend strip SRC DST

``extract`` prints one ``key<TAB>value`` line per tag. ``strip`` writes the
cleaned copy to DST and prints the removed keys, one per line. Exit status
3 means the file type is not supported; DST is not written in that case.
"""

from __future__ import annotations

import io
import re
import struct
import sys
import zlib
from collections.abc import Callable
from pathlib import Path

from PIL import ExifTags, Image

EXIT_UNSUPPORTED = 3

Pairs = list[tuple[str, str]]

_JPEG_KEEP_APP = {0xE0: b"JFIF\x00", 0xE2: b"ICC_PROFILE\x00", 0xEE: b"Adobe"}
# PNG ancillary chunks that influence how the image is drawn.
_PNG_RENDER_CHUNKS = {b"tRNS", b"gAMA", b"cHRM", b"sRGB", b"iCCP", b"sBIT", b"pHYs", b"bKGD"}
_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_EXIF_IFD = 0x8769
_GPS_IFD = 0x8825


class Unsupported(Exception):
    pass


def sniff(data: bytes) -> str | None:
    if data[:3] == b"\xff\xd8\xff":
        return "jpeg"
    if data[:8] == _PNG_SIG:
        return "png"
    if data[:5] == b"%PDF-" or (b"%PDF-" in data[:1024]):
        return "pdf"
    head = data[:512].lstrip()
    if head.startswith(b"<?xml") or head.startswith(b"<svg"):
        return "xml"
    return None


def _clean(value: object) -> str:
    if isinstance(value, bytes):
        value = value.decode("utf-8", "replace")
    text = str(value)
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


# -- EXIF -----------------------------------------------------------------

def _exif_pairs(exif: Image.Exif) -> Pairs:
    out: Pairs = []
    for tag, value in exif.items():
        if tag in (_EXIF_IFD, _GPS_IFD):
            continue
        out.append((ExifTags.TAGS.get(tag, f"Exif0x{tag:04X}"), _clean(value)))
    for tag, value in exif.get_ifd(_EXIF_IFD).items():
        out.append((ExifTags.TAGS.get(tag, f"Exif0x{tag:04X}"), _clean(value)))
    for tag, value in exif.get_ifd(_GPS_IFD).items():
        out.append((ExifTags.GPSTAGS.get(tag, f"GPS0x{tag:04X}"), _clean(value)))
    return out


def _exif_from_tiff(payload: bytes) -> Pairs:
    exif = Image.Exif()
    try:
        exif.load(payload)
    except Exception:  # noqa: BLE001 - malformed EXIF is still metadata
        return [("Exif", f"{len(payload)} bytes (unparsed)")]
    pairs = _exif_pairs(exif)
    return pairs or [("Exif", f"{len(payload)} bytes")]


def _xmp_pairs(xml: bytes) -> Pairs:
    out: Pairs = [("XMP", f"{len(xml)} bytes")]
    for m in re.finditer(rb"<(\w+):(\w+)>([^<]{1,200})</\1:\2>", xml):
        out.append((f"XMP-{m.group(1).decode()}:{m.group(2).decode()}", _clean(m.group(3).strip())))
    for m in re.finditer(rb"\s(\w+):(\w+)=\"([^\"]{1,200})\"", xml):
        if m.group(1) in (b"xmlns", b"rdf", b"x"):
            continue
        out.append((f"XMP-{m.group(1).decode()}:{m.group(2).decode()}", _clean(m.group(3))))
    return out


# -- JPEG -----------------------------------------------------------------

def _jpeg_segments(data: bytes) -> list[tuple[int, int, int]]:
    """(marker, start, end) of each header segment up to SOS."""
    segs = []
    pos = 2
    n = len(data)
    while pos + 4 <= n:
        if data[pos] != 0xFF:
            raise Unsupported("corrupt JPEG marker stream")
        marker = data[pos + 1]
        if marker == 0xFF:
            pos += 1
            continue
        if marker in (0xD8, 0x01) or 0xD0 <= marker <= 0xD7:
            segs.append((marker, pos, pos + 2))
            pos += 2
            continue
        (length,) = struct.unpack(">H", data[pos + 2:pos + 4])
        end = pos + 2 + length
        segs.append((marker, pos, end))
        if marker == 0xDA:
            break
        pos = end
    return segs


def _jpeg_structural(data: bytes) -> Pairs:
    with Image.open(io.BytesIO(data)) as im:
        out = [("ImageWidth", str(im.width)), ("ImageHeight", str(im.height)), ("ColorSpace", im.mode)]
    return out


def jpeg_extract(data: bytes) -> Pairs:
    out = _jpeg_structural(data)
    for marker, start, end in _jpeg_segments(data):
        body = data[start + 4:end]
        if marker == 0xE0 and body.startswith(b"JFIF\x00"):
            out.append(("JFIFVersion", f"{body[5]}.{body[6]:02d}"))
        elif marker == 0xE2 and body.startswith(b"ICC_PROFILE\x00"):
            out.append(("ICCProfile", "present"))
        elif marker == 0xEE and body.startswith(b"Adobe"):
            out.append(("AdobeTransform", str(body[11]) if len(body) > 11 else "?"))
        elif marker == 0xE1 and body.startswith(b"Exif\x00\x00"):
            out.extend(_exif_from_tiff(body[6:]))
        elif marker == 0xE1 and body.startswith(b"http://ns.adobe.com/xap/1.0/\x00"):
            out.extend(_xmp_pairs(body[29:]))
        elif marker == 0xFE:
            out.append(("Comment", _clean(body)))
        elif 0xE1 <= marker <= 0xEF:
            out.append((f"APP{marker - 0xE0}", f"{len(body)} bytes"))
    return out


def _jfif_from_exif(body: bytes) -> bytes | None:
    exif = Image.Exif()
    try:
        exif.load(body[6:])
    except Exception:  # noqa: BLE001
        return None
    xres, yres, unit = exif.get(282), exif.get(283), exif.get(296, 2)
    if not xres or not yres or unit not in (2, 3):
        return None
    payload = b"JFIF\x00\x01\x01" + struct.pack(">BHHBB", 1 if unit == 2 else 2,
                                               int(round(float(xres))), int(round(float(yres))), 0, 0)
    return b"\xff\xe0" + struct.pack(">H", len(payload) + 2) + payload


def jpeg_strip(data: bytes) -> tuple[bytes, list[str]]:
    segs = _jpeg_segments(data)
    has_jfif = any(m == 0xE0 and data[s + 4:s + 9] == b"JFIF\x00" for m, s, _ in segs)
    parts = [data[:2]]
    jfif_patch: bytes | None = None
    for marker, start, end in segs:
        if marker == 0xD8:
            continue
        body = data[start + 4:end]
        keep_prefix = _JPEG_KEEP_APP.get(marker)
        is_app = 0xE0 <= marker <= 0xEF
        if (is_app and not (keep_prefix and body.startswith(keep_prefix))) or marker == 0xFE:
            if marker == 0xE1 and body.startswith(b"Exif\x00\x00") and not has_jfif:
                # Without JFIF, the engine may size the image from EXIF.
                jfif_patch = jfif_patch or _jfif_from_exif(body)
            continue
        if marker == 0xDA:
            if jfif_patch:
                parts.insert(1, jfif_patch)
            parts.append(data[start:])
            break
        parts.append(data[start:end])
    cleaned = b"".join(parts)
    before = {k for k, _ in jpeg_extract(data)}
    after = {k for k, _ in jpeg_extract(cleaned)}
    return cleaned, sorted(before - after)


# -- PNG ------------------------------------------------------------------

def _png_chunks(data: bytes) -> list[tuple[bytes, int, int]]:
    out = []
    pos = 8
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        ctype = data[pos + 4:pos + 8]
        end = pos + 12 + length
        if end > len(data):
            raise Unsupported("truncated PNG chunk")
        out.append((ctype, pos, end))
        pos = end
        if ctype == b"IEND":
            break
    return out


def _png_text(ctype: bytes, body: bytes) -> tuple[str, str]:
    key, _, rest = body.partition(b"\x00")
    name = key.decode("latin-1")
    try:
        if ctype == b"tEXt":
            return name, _clean(rest.decode("latin-1"))
        if ctype == b"zTXt":
            return name, _clean(zlib.decompress(rest[1:]).decode("latin-1"))
        comp_flag, _method = rest[0], rest[1]
        rest = rest[2:]
        _lang, _, rest = rest.partition(b"\x00")
        _tkey, _, text = rest.partition(b"\x00")
        if comp_flag:
            text = zlib.decompress(text)
        if name == "XML:com.adobe.xmp":
            return "XMP", f"{len(text)} bytes"
        return name, _clean(text.decode("utf-8", "replace"))
    except (zlib.error, IndexError):
        return name, "(unreadable)"


def png_extract(data: bytes) -> Pairs:
    out: Pairs = []
    for ctype, start, end in _png_chunks(data):
        body = data[start + 8:end - 4]
        if ctype == b"IHDR":
            w, h, depth, color = struct.unpack(">IIBB", body[:10])
            out += [("ImageWidth", str(w)), ("ImageHeight", str(h)), ("BitDepth", str(depth)),
                    ("ColorType", str(color))]
        elif ctype in (b"tEXt", b"zTXt", b"iTXt"):
            out.append(_png_text(ctype, body))
        elif ctype == b"tIME":
            y, mo, d, hh, mm, ss = struct.unpack(">HBBBBB", body[:7])
            out.append(("ModifyDate", f"{y:04d}:{mo:02d}:{d:02d} {hh:02d}:{mm:02d}:{ss:02d}"))
        elif ctype == b"eXIf":
            out.extend(_exif_from_tiff(body))
        elif ctype == b"iCCP":
            out.append(("ICCProfile", "present"))
        elif ctype == b"pHYs":
            x, y, unit = struct.unpack(">IIB", body[:9])
            out.append(("Resolution", f"{x}x{y}/{unit}"))
        elif ctype in _PNG_RENDER_CHUNKS:
            out.append((ctype.decode("latin-1"), "present"))
        elif ctype[:1].islower():
            out.append((f"PNG-{ctype.decode('latin-1')}", f"{len(body)} bytes"))
    return out


def png_strip(data: bytes) -> tuple[bytes, list[str]]:
    parts = [data[:8]]
    for ctype, start, end in _png_chunks(data):
        critical = ctype[:1].isupper()
        if critical or ctype in _PNG_RENDER_CHUNKS:
            parts.append(data[start:end])
    cleaned = b"".join(parts)
    before = {k for k, _ in png_extract(data)}
    after = {k for k, _ in png_extract(cleaned)}
    return cleaned, sorted(before - after)


# -- PDF ------------------------------------------------------------------

def pdf_extract(data: bytes) -> Pairs:
    import pikepdf

    try:
        pdf = pikepdf.open(io.BytesIO(data))
    except pikepdf.PdfError as exc:
        raise Unsupported(f"unreadable PDF: {exc}") from exc
    with pdf:
        out: Pairs = [("PDFVersion", pdf.pdf_version), ("PageCount", str(len(pdf.pages)))]
        info = pdf.trailer.get("/Info")
        if info is not None:
            for key, value in info.items():
                out.append((key.lstrip("/"), _clean(_pdf_str(value))))
        meta = pdf.Root.get("/Metadata")
        if meta is not None:
            try:
                out.extend(_xmp_pairs(meta.read_bytes()))
            except pikepdf.PdfError:
                out.append(("XMP", "present"))
        if "/PieceInfo" in pdf.Root:
            out.append(("PieceInfo", "document"))
        for i, page in enumerate(pdf.pages):
            if "/PieceInfo" in page.obj:
                out.append(("PieceInfo", f"page {i + 1}"))
            if "/Metadata" in page.obj:
                out.append(("PageXMP", f"page {i + 1}"))
    return out


def _pdf_str(value: object) -> str:
    try:
        return str(value)
    except Exception:  # noqa: BLE001
        return repr(value)


def pdf_strip(data: bytes) -> tuple[bytes, list[str]]:
    import pikepdf

    before = pdf_extract(data)
    pdf = pikepdf.open(io.BytesIO(data))
    with pdf:
        if "/Info" in pdf.trailer:
            del pdf.trailer["/Info"]
        for key in ("/Metadata", "/PieceInfo"):
            if key in pdf.Root:
                del pdf.Root[key]
        for page in pdf.pages:
            for key in ("/Metadata", "/PieceInfo"):
                if key in page.obj:
                    del page.obj[key]
        buf = io.BytesIO()
        pdf.save(buf, deterministic_id=True)
    cleaned = buf.getvalue()
    after = {k for k, _ in pdf_extract(cleaned)}
    return cleaned, sorted({k for k, _ in before} - after)


# -- SVG / XML ------------------------------------------------------------

_XML_META = re.compile(rb"<(?:\w+:)?metadata\b.*?</(?:\w+:)?metadata\s*>", re.S)
_XML_COMMENT = re.compile(rb"<!--.*?-->", re.S)


def xml_extract(data: bytes) -> Pairs:
    out: Pairs = []
    for m in _XML_META.finditer(data):
        out.extend(_xmp_pairs(m.group(0)))
    for m in _XML_COMMENT.finditer(data):
        out.append(("XMLComment", _clean(m.group(0)[4:-3].strip()[:200])))
    return out


def xml_strip(data: bytes) -> tuple[bytes, list[str]]:
    before = {k for k, _ in xml_extract(data)}
    cleaned = _XML_COMMENT.sub(b"", _XML_META.sub(b"", data))
    return cleaned, sorted(before)


HANDLERS: dict[str, tuple[Callable[[bytes], Pairs], Callable[[bytes], tuple[bytes, list[str]]]]] = {
    "jpeg": (jpeg_extract, jpeg_strip),
    "png": (png_extract, png_strip),
    "pdf": (pdf_extract, pdf_strip),
    "xml": (xml_extract, xml_strip),
}


def extract(data: bytes) -> Pairs:
    kind = sniff(data)
    if kind is None:
        return []
    try:
        return HANDLERS[kind][0](data)
    except (struct.error, OSError, ValueError) as exc:
        raise Unsupported(str(exc)) from exc


def strip(data: bytes) -> tuple[bytes, list[str]]:
    kind = sniff(data)
    if kind is None:
        raise Unsupported("unknown file type")
    try:
        return HANDLERS[kind][1](data)
    except (struct.error, OSError, ValueError) as exc:
        raise Unsupported(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if len(args) < 2 or args[0] not in ("extract", "strip") or (args[0] == "strip" and len(args) != 3):
        print(__doc__, file=sys.stderr)
        return 2
    data = Path(args[1]).read_bytes()
    try:
        if args[0] == "extract":
            for key, value in extract(data):
                sys.stdout.write(f"{key}\t{value}\n")
            return 0
        cleaned, removed = strip(data)
    except Unsupported as exc:
        print(f"unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    Path(args[2]).write_bytes(cleaned)
    for key in removed:
        sys.stdout.write(key + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
