import json
import shutil
from pathlib import Path

import pytest

from repotrans.repo_index import build_index, extract_pairs

FIXTURES = Path(__file__).resolve().parent / "fixtures"
CORPUS = FIXTURES / "corpus"
SOURCE = CORPUS / "source_cs"
TARGET = CORPUS / "target_java"
MAPPING = CORPUS / "mapping.tsv"
STUB_CONFIG = CORPUS / "config.json"


@pytest.fixture(scope="session")
def source_index():
    return build_index(SOURCE, "csharp")


@pytest.fixture(scope="session")
def target_index():
    return build_index(TARGET, "java")


@pytest.fixture(scope="session")
def pairs(source_index, target_index):
    return extract_pairs(source_index, target_index, MAPPING)


@pytest.fixture(scope="session")
def pair_by_id(pairs):
    return {p.pair_id: p for p in pairs}


@pytest.fixture(scope="session")
def stub_toolchain():
    from repotrans.exec_harness import ToolchainConfig

    doc = json.loads(STUB_CONFIG.read_text())
    return ToolchainConfig.from_dict(doc["toolchain"], CORPUS)


@pytest.fixture
def target_copy(tmp_path):
    dst = tmp_path / "target_java"
    shutil.copytree(TARGET, dst)
    return dst


# ---------------------------------------------------------------- acceptance report

_CRITERIA: dict[int, list] = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    _CRITERIA.setdefault(marker, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcomes = _CRITERIA[n]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        counts = ", ".join(f"{outcomes.count(o)} {o}" for o in ("passed", "failed", "skipped") if o in outcomes)
        terminalreporter.write_line(f"criterion {n:>2}: {verdict} ({counts})")
