import random

import pytest
from corpus import BBL, doc
from hypothesis import given, settings
from hypothesis import strategies as st
from strategies import tex_like

from texscrub.bundle import from_directory
from texscrub.dangling import compile_with_recorder
from texscrub.errors import StalePlan
from texscrub.latex_ast import apply_edits, parse_bytes
from texscrub.sanitizer import (
    MECHANISMS, find_irrelevant_spans, inline_bbl, make_plan, plan_content, stage_plan,
)
from texscrub.verifier import compare


def spans(src: bytes):
    return find_irrelevant_spans(parse_bytes(src))


def clean_text(src: bytes) -> bytes:
    return apply_edits(src, [(s.span, s.replacement) for s in spans(src)])


def texts(src: bytes) -> list[bytes]:
    return [src[s.span.start:s.span.end] for s in spans(src)]


def pdf_of(engine, bundle_of, source: str | bytes, name: str) -> bytes:
    b = bundle_of({"main.tex": source}, name)
    return compile_with_recorder(b, "main.tex", engine).pdf


# -- span finding -----------------------------------------------------------

def test_trailing_comment_and_post_document_text():
    src = b"body % note\n\\end{document}\nleftover"
    found = spans(src)
    assert [s.mechanism for s in found] == ["line_comment", "outside_document"]
    assert b"% note" in texts(src)[0]
    assert texts(src)[1].endswith(b"leftover")


def test_iffalse_covers_construct():
    src = b"\\iffalse secret \\fi"
    found = spans(src)
    assert [(s.mechanism, s.span.start, s.span.end) for s in found] == [("skipped_if_branch", 0, len(src))]


def test_discarded_argument_interior():
    src = b"\\newcommand{\\hide}[1]{}\\hide{draft text}"
    found = spans(src)
    assert [(s.mechanism, src[s.span.start:s.span.end]) for s in found] == [
        ("discarded_command_argument", b"draft text")]
    assert clean_text(src) == b"\\newcommand{\\hide}[1]{}\\hide{}"


def test_taken_flag_branch_kept():
    assert spans(b"\\newif\\iffoo\\footrue\\iffoo kept\\fi") == []


def test_flag_false_branch_removed():
    out = clean_text(b"\\newif\\iffoo\\foofalse\n\\iffoo gone\\fi kept")
    assert b"gone" not in out and b"kept" in out


def test_flag_toggled_twice_is_unknown():
    src = b"\\newif\\iffoo\\footrue\\foofalse\\iffoo x\\fi"
    assert not any(s.mechanism == "skipped_if_branch" for s in spans(src))


def test_true_branch_with_else_drops_else():
    out = clean_text(b"\\iftrue yes\\else no\\fi")
    assert out == b"\\iftrue yes\\else\\fi"


def test_if0_keeps_comparison_token():
    assert clean_text(b"\\if0 a\\else b\\fi") == b"\\if0 \\else b\\fi"
    assert clean_text(b"\\iffalse a\\else b\\fi") == b"\\iffalse\\else b\\fi"
    assert clean_text(b"x\\if0 a\\fi y") == b"xy"


def test_whole_line_comment_removed_with_newline():
    assert clean_text(b"a\n% whole-line note\nb\n") == b"a\nb\n"


def test_trailing_comment_keeps_percent():
    assert clean_text(b"word % secret\n") == b"word %\n"


@pytest.mark.parametrize("src", [
    b"50\\% sure\n", b"\\verb|100% x|\n", b"\\url{a%20b}\n",
    b"\\begin{verbatim}\n% kept\n\\end{verbatim}\n", b"\\begin{lstlisting}\nx = 1 % kept\n\\end{lstlisting}\n",
])
def test_special_contexts_untouched(src):
    assert spans(src) == []


def test_unbalanced_conditional_left_alone():
    assert not any(s.mechanism == "skipped_if_branch" for s in spans(b"\\iffalse { unbalanced \\fi"))


def test_comment_env_needs_package():
    body = "\\begin{comment}\nsecret\n\\end{comment}\n"
    without = spans(doc(body).encode())
    assert not any(s.mechanism == "comment_environment" for s in without)
    with_pkg = spans(doc(body, "\\usepackage{verbatim}\n").encode())
    assert any(s.mechanism == "comment_environment" for s in with_pkg)


def test_redefined_macro_not_discarding():
    src = b"\\newcommand{\\hide}[1]{}\\renewcommand{\\hide}[1]{#1}\\hide{shown}"
    assert spans(src) == []


def test_optional_argument_macro_not_discarding():
    assert spans(b"\\newcommand{\\hide}[2][x]{#1}\\hide{kept}") == []


def test_bbl_inline_replaces_bibliography():
    root = parse_bytes(b"\\cite{k}\n\\bibliographystyle{plain}\n\\bibliography{refs}\nEnd.\n")
    out, replaced = inline_bbl(root, BBL.encode())
    assert b"\\begin{thebibliography}" in out and b"\\bibliography{" not in out
    # the style command only writes to the aux file, so it may stay
    assert b"\\bibliographystyle{plain}" in out
    assert len(replaced) == 1


# -- compiled checks --------------------------------------------------------

@pytest.mark.parametrize("source", [
    doc("word % secret\nnext"),
    doc("a\n% whole-line note\nb"),
    doc("x \\iffalse hidden\\fi y"),
    doc("A\\if0 dropped\\else kept\\fi B"),
    doc("\\ifdraft D\\fi E\\iffinal F\\else G\\fi", "\\newif\\ifdraft\\newif\\iffinal\\finaltrue\n"),
    doc("T \\hide{h} U", "\\newcommand{\\hide}[1]{}\n"),
    doc("P\\hide{h}Q", "\\newcommand{\\hide}[1]{}\n"),
    doc("\\relax\\iffalse x\\fi y"),
    doc("x") + "tail\n",
])
def test_edits_are_pixel_identical(engine, bundle_of, source):
    src = source.encode()
    cleaned = clean_text(src)
    assert cleaned != src
    a = pdf_of(engine, bundle_of, src, "a")
    b = pdf_of(engine, bundle_of, cleaned, "b")
    assert compare(a, b).verdict == "identical"


def test_taken_branch_matters(engine, bundle_of):
    pre = "\\newif\\iffoo\\footrue\n"
    a = pdf_of(engine, bundle_of, doc("\\iffoo kept\\fi x", pre), "a")
    b = pdf_of(engine, bundle_of, doc("\\iffoo\\fi x", pre), "b")
    assert compare(a, b).verdict == "different"


# -- plans ------------------------------------------------------------------

def test_plan_is_stale_after_source_change(bundle_of, tmp_path):
    b = bundle_of({"main.tex": doc("x % c")})
    content = plan_content(b, ["main.tex"], ["main.tex"])
    from texscrub.dangling import classify_required
    plan = make_plan(b, classify_required(b, ["main.tex"], ["main.tex"]), ["main.tex"], content, keep_dangling=False)
    (b.abspath("main.tex")).write_text(doc("changed % c"))
    with pytest.raises(StalePlan):
        stage_plan(from_directory(b.root_dir), plan, tmp_path / "stage")


def test_every_mechanism_is_named():
    assert len(MECHANISMS) == 6 and len(set(MECHANISMS)) == 6


# -- properties -------------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(tex_like())
def test_spans_sorted_disjoint_in_bounds(src):
    found = spans(src)
    prev = 0
    for s in found:
        assert prev <= s.span.start <= s.span.end <= len(src)
        assert s.mechanism in MECHANISMS
        prev = s.span.end


SNIPPETS = [
    "plain text", "50\\% done", "x % trailing\n", "\n% whole line\n", "\\iffalse gone\\fi ",
    "\\iftrue kept\\else gone\\fi ", "\\if0 gone\\else kept\\fi ", "\\hide{gone}", "\\keep{kept}",
    "\\verb|a%b|", "\\url{a%b}", "{group % c\n}", "\\begin{verbatim}\n%v\n\\end{verbatim}\n",
    "\n\\begin{comment}\ngone\n\\end{comment}\n", "\\ifdraft gone\\fi ", "x\\\\% c\n", "\n\n",
]


@st.composite
def documents(draw) -> bytes:
    body = "".join(draw(st.lists(st.sampled_from(SNIPPETS), max_size=12)))
    pre = ("\\usepackage{verbatim}\n\\usepackage{url}\n\\newif\\ifdraft\n\\draftfalse\n\\newcommand{\\hide}[1]{}\n"
           "\\newcommand{\\keep}[1]{#1}\n")
    tail = draw(st.sampled_from(["", "after\n", "% c\n"]))
    return (doc(body, pre) + tail).encode()


@settings(max_examples=200, deadline=None)
@given(documents())
def test_sanitizing_is_idempotent(src):
    once = clean_text(src)
    assert spans(once) == []
    assert clean_text(once) == once


@settings(max_examples=200, deadline=None)
@given(documents())
def test_kept_markers_survive(src):
    out = clean_text(src)
    assert out.count(b"kept") == src.count(b"kept")
    assert b"gone" not in out


def test_random_documents_compile_identically(engine, bundle_of):
    rng = random.Random(7)
    pre = ("\\usepackage{verbatim}\n\\usepackage{url}\n\\newif\\ifdraft\n\\draftfalse\n\\newcommand{\\hide}[1]{}\n"
           "\\newcommand{\\keep}[1]{#1}\n")
    for i in range(8):
        body = "".join(rng.choice(SNIPPETS) for _ in range(10))
        src = (doc(body, pre) + "after\n").encode()
        a = pdf_of(engine, bundle_of, src, f"a{i}")
        b = pdf_of(engine, bundle_of, clean_text(src), f"b{i}")
        assert compare(a, b).verdict == "identical", body


@settings(max_examples=300, deadline=None)
@given(tex_like())
def test_sanitizing_arbitrary_input_reaches_fixpoint(src):
    once = clean_text(src)
    assert clean_text(once) == once
