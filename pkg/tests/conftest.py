from __future__ import annotations

import shutil
import sys
from collections.abc import Iterator
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corpus import BUNDLES, build_corpus, write_files  # noqa: E402

from texscrub.bundle import from_directory, ingest  # noqa: E402
from texscrub.engines import Engine, select_engine  # noqa: E402
from texscrub.errors import EngineMissing  # noqa: E402
from texscrub.pipeline import CleanOptions, CleanResult, clean_bundle  # noqa: E402


@pytest.fixture(scope="session")
def engine() -> Iterator[Engine]:
    try:
        eng = select_engine("auto")
        eng.version()
    except EngineMissing as exc:
        pytest.skip(f"no TeX engine: {exc}")
    yield eng
    eng.close()


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    d = tmp_path_factory.mktemp("corpus")
    build_corpus(d)
    return d


@pytest.fixture(scope="session")
def cleaned(corpus_dir: Path, engine: Engine, tmp_path_factory: pytest.TempPathFactory) -> dict[str, CleanResult]:
    """Every corpus bundle cleaned once with default options."""
    out = tmp_path_factory.mktemp("cleaned")
    results = {}
    for name in BUNDLES:
        with ingest(corpus_dir / name) as bundle:
            results[name] = clean_bundle(bundle, out / name, engine, CleanOptions())
    return results


@pytest.fixture
def make_bundle(tmp_path: Path):  # type: ignore[no-untyped-def]
    def make(files: dict[str, bytes | str], name: str = "b") -> Path:
        d = tmp_path / name
        if d.exists():
            shutil.rmtree(d)
        return write_files(d, files)

    return make


@pytest.fixture
def bundle_of(make_bundle):  # type: ignore[no-untyped-def]
    def make(files: dict[str, bytes | str], name: str = "b"):  # type: ignore[no-untyped-def]
        return from_directory(make_bundle(files, name))

    return make


@pytest.fixture(scope="session")
def mwe_results(engine: Engine) -> dict[str, object]:
    """Built-in and naive cleaners through the MWE suite, with wall time per plugin."""
    import time

    from texscrub.harness import builtin_plugin, naive_plugin, run_test_suite

    results, elapsed = {}, {}
    for plugin in (builtin_plugin(), naive_plugin()):
        start = time.monotonic()
        results[plugin.name] = run_test_suite(plugin, engine)
        elapsed[plugin.name] = time.monotonic() - start
    return {"results": results, "elapsed": elapsed}


def pytest_terminal_summary(terminalreporter) -> None:  # type: ignore[no-untyped-def]
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n])
