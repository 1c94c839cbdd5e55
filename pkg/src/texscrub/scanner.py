"""Secret and sensitive-pattern scanning over bundle text.

Matching runs on raw bytes so that spans are byte offsets into the file.
Rules that target secrets are gated by :func:`filter_candidate`.
"""

from __future__ import annotations

import bisect
import json
import math
import posixpath
import re
from collections import Counter
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from .bundle import SubmissionBundle
from .dangling import Classification
from .latex_ast import Span, looks_binary

SEVERITY_ORDER = {"H": 0, "M": 1, "L": 2}
CONTEXTS = ("any", "comment_only", "dangling_only")
ENTROPY_THRESHOLD = 3.0
_SEGMENT_SPLIT = re.compile(r"[^0-9A-Za-z]+")


# -- entropy filter -----------------------------------------------------

def shannon_entropy(segment: str) -> float:
    """Bits per character of the empirical character distribution."""
    if not segment:
        raise ValueError("entropy of an empty segment is undefined")
    n = len(segment)
    return -sum((c / n) * math.log2(c / n) for c in Counter(segment).values()) + 0.0


def segments(candidate: str, splitter: re.Pattern[str] = _SEGMENT_SPLIT) -> list[str]:
    parts = [p for p in splitter.split(candidate) if p]
    return parts or [candidate]


def _strictly_monotone(s: str) -> bool:
    if len(s) < 2:
        return False
    pairs = list(zip(s, s[1:]))
    return all(a < b for a, b in pairs) or all(a > b for a, b in pairs)


_KEYBOARD_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm", "1234567890")
JUNK_LITERALS = ("example", "test", "dummy")
_REPEAT = re.compile(r"(.)\1{3,}")


def _keyboard_walk(s: str, width: int = 5) -> bool:
    low = s.lower()
    for row in _KEYBOARD_ROWS:
        for seq in (row, row[::-1]):
            for i in range(len(seq) - width + 1):
                if seq[i:i + width] in low:
                    return True
    return False


@dataclass(frozen=True)
class FilterVerdict:
    keep: bool
    reason: str | None = None

    def __str__(self) -> str:
        return "keep" if self.keep else f"drop({self.reason})"


def filter_candidate(candidate: str, threshold: float = ENTROPY_THRESHOLD,
                     splitter: re.Pattern[str] = _SEGMENT_SPLIT) -> FilterVerdict:
    """Keep/drop decision for one secret candidate.

    Dropped when the best segment carries at most ``threshold`` bits, when
    the string (or each of its segments) is a strictly monotone run, or when
    it contains known junk.
    """
    if not candidate:
        raise ValueError("empty candidate")
    parts = segments(candidate, splitter)
    if max(shannon_entropy(p) for p in parts) <= threshold:
        return FilterVerdict(False, "entropy")
    if _strictly_monotone(candidate) or all(_strictly_monotone(p) for p in parts):
        return FilterVerdict(False, "monotone")
    low = candidate.lower()
    if _REPEAT.search(candidate) or _keyboard_walk(candidate) or any(j in low for j in JUNK_LITERALS):
        return FilterVerdict(False, "junk")
    return FilterVerdict(True)


# -- rules --------------------------------------------------------------

def _luhn(digits: str) -> bool:
    nums = [int(c) for c in digits if c.isdigit()]
    if not 13 <= len(nums) <= 19:
        return False
    total = 0
    for i, d in enumerate(reversed(nums)):
        if i % 2:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return total % 10 == 0


def _iban_ok(text: str) -> bool:
    s = text.replace(" ", "")
    if not 15 <= len(s) <= 34:
        return False
    moved = s[4:] + s[:4]
    num = "".join(str(int(c, 36)) for c in moved)
    return int(num) % 97 == 1


def _ipv4_ok(text: str) -> bool:
    parts = text.split(".")
    return len(parts) == 4 and all(p.isdigit() and int(p) <= 255 and (p == "0" or not p.startswith("0"))
                                   for p in parts)


VALIDATORS: dict[str, Callable[[str], bool]] = {"luhn": _luhn, "iban": _iban_ok, "ipv4": _ipv4_ok}

PROFANITY = ("fuck", "fucking", "shit", "bullshit", "crap", "damn", "bastard", "asshole", "wtf",
             "piss", "dickhead", "bollocks")


@dataclass(frozen=True)
class PatternRule:
    name: str
    regex: str
    severity: str
    entropy_gated: bool = False
    context: str = "any"
    group: int = 0
    flags: int = 0
    validator: str | None = None

    def __post_init__(self) -> None:
        if self.severity not in SEVERITY_ORDER:
            raise ValueError(f"{self.name}: severity must be H, M or L")
        if self.context not in CONTEXTS:
            raise ValueError(f"{self.name}: unknown context {self.context!r}")
        if self.validator is not None and self.validator not in VALIDATORS:
            raise ValueError(f"{self.name}: unknown validator {self.validator!r}")

    @property
    def compiled(self) -> re.Pattern[bytes]:
        return _compile(self.regex, self.flags)


_CACHE: dict[tuple[str, int], re.Pattern[bytes]] = {}


def _compile(regex: str, flags: int) -> re.Pattern[bytes]:
    key = (regex, flags)
    if key not in _CACHE:
        _CACHE[key] = re.compile(regex.encode("utf-8"), flags)
    return _CACHE[key]


_B58 = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"

BUILTIN_RULES: tuple[PatternRule, ...] = (
    PatternRule("Email addresses", r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}\b", "M"),
    PatternRule("URLs", r"\b(?:https?|ftp)://[^\s{}<>\"'\\%]+", "L"),
    PatternRule("Profanity", r"(?i)\b(?:" + "|".join(PROFANITY) + r")\b", "L"),
    PatternRule("P.O. box", r"(?i)\bP\.?\s?O\.?\s*Box\s+\d+\b", "L"),
    PatternRule("IPv4 addresses", r"(?<![\d.])(?:\d{1,3}\.){3}\d{1,3}(?![\d.])", "L", validator="ipv4"),
    PatternRule("Credit card number", r"(?<![\d-])(?:\d[ -]?){12,18}\d(?![\d-])", "H", validator="luhn"),
    PatternRule("US SSN", r"(?<![\d-])(?!000|666|9\d\d)\d{3}-(?!00)\d{2}-(?!0000)\d{4}(?![\d-])", "H"),
    PatternRule("Review form",
                r"(?i)\b(?:overall merit|reviewer expertise|reviewer\s*#\s*\d|confidence score|"
                r"strengths and weaknesses|detailed comments for (?:the )?authors|summary of the review)\b", "M"),
    PatternRule("Generic passwords",
                r"(?i)\b(?:password|passwd|passphrase|pwd)\b\s*[:=]\s*[\"']?([^\s\"'%{}\\,;]{6,64})",
                "H", entropy_gated=True, group=1),
    PatternRule("AI Disclaimers",
                r"(?i)\b(?:as an ai language model|(?:generated|written|drafted|polished) (?:by|with|using) "
                r"(?:chatgpt|gpt-?[345]o?|claude|gemini|an? (?:ai|llm|large language model)))\b", "L"),
    PatternRule("IBAN", r"\b[A-Z]{2}\d{2}(?: ?[A-Z0-9]{4}){2,7}(?: ?[A-Z0-9]{1,3})?\b", "M", validator="iban"),
    PatternRule("censor pkg usage",
                r"\\usepackage\s*(?:\[[^\]]*\])?\s*\{[^}]*\b(?:censor|pdfprivacy)\b[^}]*\}|\\(?:censor|blackout|xblackout)\b",
                "M"),
    PatternRule("AWS access keys", r"\b((?:AKIA|ASIA|ABIA|ACCA|A3T[A-Z0-9])[A-Z0-9]{16})\b", "H",
                entropy_gated=True, group=1),
    PatternRule("Prompt injection",
                r"(?i)\b(?:ignore (?:all )?(?:previous|prior|above|preceding) instructions|"
                r"disregard (?:all )?(?:previous|prior) instructions|give (?:a )?positive review only|"
                r"do not highlight any negatives|recommend accept(?:ing|ance) (?:of )?this paper)\b", "H"),
    PatternRule("Bitcoin addresses", r"(?<![0-9A-Za-z])([13][" + _B58 + r"]{25,34})(?![0-9A-Za-z])", "L",
                entropy_gated=True, group=1),
    PatternRule("Password in URL", r"\b[A-Za-z][A-Za-z0-9+.-]{1,15}://[^/\s:@{}]{1,64}:([^/\s:@{}]{3,64})@[^\s/{}]+",
                "H", group=1),
    PatternRule("Bitcoin Bech32", r"\b(bc1[ac-hj-np-z02-9]{11,71})\b", "L", entropy_gated=True, group=1),
    PatternRule("Google API keys", r"\b(AIza[0-9A-Za-z_-]{35})(?![0-9A-Za-z_-])", "H", group=1),
    PatternRule("GitLab tokens", r"\b(glpat-[0-9A-Za-z_-]{20})(?![0-9A-Za-z_-])", "H", group=1),
    PatternRule("Slack tokens", r"\b(xox[baprs]-[0-9A-Za-z-]{10,72})\b", "H", group=1),
    PatternRule("Generic API keys",
                r"(?i)\b(?:api[_-]?key|apikey|x-api-key|api[_-]?token)\b[\"']?\s*[:=]\s*[\"']?([0-9A-Za-z_\-]{16,64})",
                "H", entropy_gated=True, group=1),
    PatternRule("GitHub tokens", r"\b((?:gh[pousr]_[0-9A-Za-z]{36})|(?:github_pat_[0-9A-Za-z_]{82}))\b", "H", group=1),
    PatternRule("JWT tokens", r"\b(eyJ[0-9A-Za-z_-]{8,}\.eyJ[0-9A-Za-z_-]{8,}\.[0-9A-Za-z_-]{8,})", "M", group=1),
    PatternRule("/etc/passwd entries",
                r"(?m)^[a-z_][a-z0-9_-]{0,31}:[x*!]?:\d+:\d+:[^:\n]*:/[^:\n]*:/[^:\n]*$", "M"),
    PatternRule("Nmap scans",
                r"(?im)^(?:Starting Nmap \d[^\n]*|Nmap scan report for [^\n]+|\d{1,5}/(?:tcp|udp)\s+(?:open|filtered)\s+\S+)",
                "L"),
    PatternRule("Hugging Face keys", r"\b(hf_[A-Za-z0-9]{34})\b", "H", entropy_gated=True, group=1),
    PatternRule("Facebook OAuth",
                r"\b(EAA[A-Za-z0-9]{80,})|(?i:facebook)[^\n]{0,40}[\"']([0-9a-f]{32})[\"']", "H", group=0),
    PatternRule("SSH private keys", r"-----BEGIN (?:RSA |DSA |EC |OPENSSH |ENCRYPTED )?PRIVATE KEY-----", "H"),
    PatternRule("OpenAI API keys",
                r"\b(sk-(?:proj-|svcacct-)?[A-Za-z0-9_-]{20,}T3BlbkFJ[A-Za-z0-9_-]{20,}|sk-[A-Za-z0-9]{48})\b",
                "H", group=1),
    PatternRule("X access tokens", r"\b([0-9]{15,25}-[0-9A-Za-z]{40})\b", "H", entropy_gated=True, group=1),
    PatternRule("Google service acc.", r"\"type\"\s*:\s*\"service_account\"", "H"),
    PatternRule("Slack webhooks",
                r"https://hooks\.slack\.com/services/T[0-9A-Z]{8,12}/B[0-9A-Z]{8,12}/[0-9A-Za-z]{24}", "H"),
    PatternRule("/etc/shadow",
                r"(?m)^[a-z_][a-z0-9_-]{0,31}:\$(?:1|2[abxy]?|5|6|y)\$[^:\n]+:\d*:\d*:\d*:\d*:", "M"),
    PatternRule("Generic secrets",
                r"(?i)\b(?:client[_-]?secret|secret[_-]?key|secret|private[_-]?key)\b[\"']?\s*[:=]\s*[\"']?([0-9A-Za-z_\-+/=]{12,})",
                "H", entropy_gated=True, group=1),
    PatternRule("Google access tokens", r"\b(ya29\.[0-9A-Za-z_-]{20,})", "H", group=1),
)

METADATA_RULES: dict[str, tuple[str, str]] = {
    "gps": ("GPS metadata", "H"),
    "username": ("Username metadata", "M"),
    "email": ("Email metadata", "M"),
    "software": ("Software metadata", "L"),
    "hardware": ("Hardware metadata", "L"),
}

CREDENTIAL_FILES = frozenset(
    {
        ".env", ".netrc", ".pgpass", ".pypirc", ".npmrc", ".htpasswd", ".git-credentials", ".dockercfg",
        "credentials", "credentials.json", "secrets.json", "secrets.yaml", "secrets.yml", "wp-config.php",
        "id_rsa", "id_dsa", "id_ecdsa", "id_ed25519", "service-account.json",
    }
)
CREDENTIAL_SUFFIXES = (".pem", ".p12", ".pfx", ".keystore", ".jks")
FILE_RULES: dict[str, tuple[str, str]] = {
    "nfs": ("NFS remnant file", "M"),
    "git": ("Version control data", "M"),
    "credentials": ("Credential configuration file", "H"),
}


def load_rules(path: str | Path) -> list[PatternRule]:
    """Rule catalog from TOML (``[[rule]]`` tables) or JSON (a list)."""
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".json":
        entries = json.loads(raw)
    else:
        from ._toml import loads

        entries = loads(raw.decode("utf-8")).get("rule", [])
    rules = []
    for e in entries:
        rules.append(PatternRule(
            name=str(e["name"]), regex=str(e["regex"]), severity=str(e["severity"]),
            entropy_gated=bool(e.get("entropy_gated", False)), context=str(e.get("context", "any")),
            group=int(e.get("group", 0)), validator=e.get("validator"),
        ))
        rules[-1].compiled  # noqa: B018 - fail early on a bad regex
    return rules


# -- findings -----------------------------------------------------------

def redact(text: str) -> str:
    if len(text) <= 4:
        return "*" * len(text)
    return text[:2] + "*" * (len(text) - 4) + text[-2:]


@dataclass(frozen=True)
class Finding:
    rule: str
    file: str
    span: Span | None
    matched: str
    severity: str
    in_dangling_file: bool = False
    in_comment: bool = False
    kind: str = "pattern"  # pattern | metadata | file

    @property
    def redacted(self) -> str:
        return redact(self.matched)

    def sort_key(self) -> tuple[int, str, int, str]:
        return SEVERITY_ORDER[self.severity], self.file, self.span.start if self.span else -1, self.rule

    def to_dict(self, redacted: bool = True) -> dict[str, object]:
        return {
            "rule": self.rule,
            "severity": self.severity,
            "kind": self.kind,
            "file": self.file,
            "start": self.span.start if self.span else None,
            "end": self.span.end if self.span else None,
            "line": self.span.line if self.span else None,
            "match": self.redacted if redacted else self.matched,
            "in_dangling_file": self.in_dangling_file,
            "in_comment": self.in_comment,
        }


class _Lines:
    def __init__(self, data: bytes) -> None:
        self.starts = [0] + [m.end() for m in re.finditer(rb"\n", data)]

    def line(self, offset: int) -> int:
        return bisect.bisect_right(self.starts, offset)


def scan_text(path: str, data: bytes, rules: Iterable[PatternRule] = BUILTIN_RULES,
              comment_spans: Iterable[Span] = (), dangling: bool = False,
              threshold: float = ENTROPY_THRESHOLD) -> list[Finding]:
    rules = list(rules)
    comments = sorted(comment_spans)
    ends = [s.end for s in comments]
    lines = _Lines(data)
    raw: list[tuple[int, Finding]] = []
    for order, rule in enumerate(rules):
        if rule.context == "dangling_only" and not dangling:
            continue
        for m in rule.compiled.finditer(data):
            g = rule.group if rule.group <= (m.re.groups or 0) else 0
            if g and m.group(g) is None:
                g = 0
            start, end = m.span(g)
            if start == end:
                continue
            text = data[start:end].decode("utf-8", "replace")
            if rule.validator and not VALIDATORS[rule.validator](text):
                continue
            if rule.entropy_gated and not filter_candidate(text, threshold).keep:
                continue
            in_comment = _overlaps_any(start, end, comments, ends)
            if rule.context == "comment_only" and not in_comment:
                continue
            raw.append((order, Finding(rule.name, path, Span(start, end, lines.line(start)), text,
                                       rule.severity, dangling, in_comment)))
    return _dedupe(raw)


def _overlaps_any(start: int, end: int, spans: list[Span], ends: list[int]) -> bool:
    # spans are sorted and disjoint, so their ends are sorted too
    j = bisect.bisect_right(ends, start)
    return j < len(spans) and spans[j].start < end


def _dedupe(raw: list[tuple[int, Finding]]) -> list[Finding]:
    """Drop findings overlapping a more severe (or earlier-listed) one."""
    raw.sort(key=lambda t: (SEVERITY_ORDER[t[1].severity], t[0], t[1].span.start))  # type: ignore[union-attr]
    kept: list[Finding] = []
    for _order, f in raw:
        assert f.span is not None
        if any(k.span is not None and k.span.overlaps(f.span) for k in kept):
            continue
        kept.append(f)
    return kept


def file_findings(bundle: SubmissionBundle, dangling: set[str]) -> list[Finding]:
    out = []
    git_reported = False
    for path in bundle.paths():
        name = posixpath.basename(path)
        parts = path.split("/")
        if name.startswith(".nfs"):
            rule, sev = FILE_RULES["nfs"]
            out.append(Finding(rule, path, None, name, sev, path in dangling, False, "file"))
        if ".git" in parts[:-1] and not git_reported:
            rule, sev = FILE_RULES["git"]
            git_dir = "/".join(parts[: parts.index(".git") + 1])
            out.append(Finding(rule, git_dir, None, git_dir, sev, True, False, "file"))
            git_reported = True
        if name in CREDENTIAL_FILES or name.startswith(".env.") or name.lower().endswith(CREDENTIAL_SUFFIXES):
            rule, sev = FILE_RULES["credentials"]
            out.append(Finding(rule, path, None, name, sev, path in dangling, False, "file"))
    return out


def metadata_findings(bundle: SubmissionBundle, dangling: set[str], backend=None) -> tuple[list[Finding], list[str]]:  # type: ignore[no-untyped-def]
    from .metadata import extract_metadata_checked, is_payload

    out: list[Finding] = []
    warnings: list[str] = []
    for path in bundle.paths():
        if not is_payload(path):
            continue
        records, warning = extract_metadata_checked(bundle.abspath(path), backend, rel=path)
        if warning:
            warnings.append(warning)
        by_class: dict[str, list[str]] = {}
        for r in records:
            if r.sensitive_class in METADATA_RULES:
                by_class.setdefault(r.sensitive_class, []).append(f"{r.key}={r.value}")
        for cls, values in sorted(by_class.items()):
            rule, sev = METADATA_RULES[cls]
            out.append(Finding(rule, path, None, "; ".join(values), sev, path in dangling, False, "metadata"))
    return out, warnings


@dataclass
class ScanResult:
    findings: list[Finding]
    warnings: list[str] = field(default_factory=list)
    timestamps: dict[str, object] = field(default_factory=dict)
    comments: list[dict[str, object]] = field(default_factory=list)

    def count(self, severity: str | None = None) -> int:
        return sum(1 for f in self.findings if severity is None or f.severity == severity)


def scan(
    bundle: SubmissionBundle,
    classifications: Mapping[str, Classification] | None = None,
    spans: Mapping[str, Iterable[object]] | None = None,
    *,
    rules: Iterable[PatternRule] = BUILTIN_RULES,
    metadata: bool = True,
    backend=None,  # type: ignore[no-untyped-def]
    threshold: float = ENTROPY_THRESHOLD,
) -> list[Finding]:
    """All findings for a bundle, sorted by severity, then path, then offset."""
    return scan_bundle(bundle, classifications, spans, rules=rules, metadata=metadata, backend=backend,
                       threshold=threshold).findings


def scan_bundle(
    bundle: SubmissionBundle,
    classifications: Mapping[str, Classification] | None = None,
    spans: Mapping[str, Iterable[object]] | None = None,
    *,
    rules: Iterable[PatternRule] = BUILTIN_RULES,
    metadata: bool = True,
    backend=None,  # type: ignore[no-untyped-def]
    threshold: float = ENTROPY_THRESHOLD,
    epoch: int | None = None,
) -> ScanResult:
    rules = list(rules)
    dangling = {p for p, c in (classifications or {}).items() if c.verdict == "dangling"}
    if spans is None:
        spans = comment_spans(bundle)
    warnings: list[str] = []
    findings: list[Finding] = []
    for path in bundle.paths():
        data = bundle.read(path)
        if looks_binary(data):
            continue
        file_spans = [_as_span(s) for s in spans.get(path, ())]
        findings.extend(scan_text(path, data, rules, file_spans, path in dangling, threshold))
    findings.extend(file_findings(bundle, dangling))
    if metadata:
        meta, warns = metadata_findings(bundle, dangling, backend)
        findings.extend(meta)
        warnings.extend(warns)
    findings.sort(key=Finding.sort_key)
    return ScanResult(findings, warnings, timestamp_report(bundle, epoch), export_comments(bundle, spans))


def _as_span(obj: object) -> Span:
    return obj if isinstance(obj, Span) else obj.span  # type: ignore[attr-defined,return-value]


def comment_spans(bundle: SubmissionBundle) -> dict[str, list[object]]:
    """Irrelevant spans of every TeX file, computed without compiling."""
    from .bundle import detect_roots
    from .errors import NoRootFound
    from .sanitizer import plan_content

    try:
        roots = detect_roots(bundle)
    except NoRootFound:
        roots = []
    stage = plan_content(bundle, bundle.tex_files(), roots, inline_bibliography=False)
    return {p: list(s) for p, s in stage.span_edits.items()}


def export_comments(bundle: SubmissionBundle, spans: Mapping[str, Iterable[object]]) -> list[dict[str, object]]:
    """Raw irrelevant text, one record per span, for external review."""
    out = []
    for path in sorted(spans):
        if path not in bundle.files:
            continue
        data = bundle.read(path)
        for s in spans[path]:
            span = _as_span(s)
            out.append({
                "file": path, "line": span.line, "start": span.start, "end": span.end,
                "mechanism": getattr(s, "mechanism", "line_comment"),
                "text": data[span.start:span.end].decode("utf-8", "replace"),
            })
    return out


def timestamp_report(bundle: SubmissionBundle, epoch: int | None = None) -> dict[str, object]:
    """Distinct modification times; the build epoch does not count."""
    from .metadata import DEFAULT_EPOCH

    ep = DEFAULT_EPOCH if epoch is None else epoch
    mtimes = sorted({int(e.mtime) for e in bundle.files.values()} - {ep})
    return {
        "unique_timestamps": len(mtimes),
        "earliest": mtimes[0] if mtimes else None,
        "latest": mtimes[-1] if mtimes else None,
    }


def write_jsonl(findings: Iterable[Finding], fh, redacted: bool = True) -> None:  # type: ignore[no-untyped-def]
    for f in findings:
        fh.write(json.dumps(f.to_dict(redacted), sort_keys=True) + "\n")
