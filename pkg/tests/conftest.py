import json

import pytest

from mtr.corpus import SynthSpec, synth_generate


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def tiny_rows():
    return [
        {"id": "d1", "name": "forecast", "description": "weather forecast tool"},
        {"id": "d2", "name": "player", "description": "music player"},
        {"id": "d3", "name": "map", "description": "weather map"},
    ]


@pytest.fixture
def tiny_corpus(tmp_path, tiny_rows):
    from mtr.corpus import load_tools

    return load_tools(write_jsonl(tmp_path / "tools.jsonl", tiny_rows))


@pytest.fixture(scope="session")
def synth_small():
    return synth_generate(SynthSpec(tool_count=60, sample_count=30, train_count=5, keyword_dropout=0.8, seed=7,
                                    vocabulary_size=100))


# --- acceptance summary ----------------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    detail = ""
    if report.failed and getattr(report.longrepr, "reprcrash", None) is not None:
        detail = report.longrepr.reprcrash.message.splitlines()[0]
    _ACCEPTANCE[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[number]
        line = f"[{status}] {number}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
