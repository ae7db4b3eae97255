from __future__ import annotations

from pathlib import Path

import pytest

from kerap.gateway import FunctionBackend, Gateway, LlmSettings

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def write_kg(tmp_path):
    """Write entity/triple TSVs; returns (entity_path, triple_path)."""

    def _write(entities, triples, name="kg"):
        d = tmp_path / name
        d.mkdir(exist_ok=True)
        ent = d / "entities.tsv"
        tri = d / "triples.tsv"
        ent.write_text("id\tname\tcategory\n" + "".join(f"{i}\t{n}\t{c}\n" for i, n, c in entities), encoding="utf-8")
        tri.write_text("head\tpredicate\ttail\n" + "".join(f"{h}\t{p}\t{t}\n" for h, p, t in triples), encoding="utf-8")
        return ent, tri

    return _write


def scripted(fn) -> Gateway:
    """Gateway answering every request with ``fn(request)``.

    Requests are kept on ``gateway.requests`` in call order.
    """
    requests = []

    def answer(req):
        requests.append(req)
        return fn(req)

    gw = Gateway(FunctionBackend(answer))
    gw.requests = requests
    return gw


LLM = LlmSettings()


# --------------------------------------------------------------- acceptance summary

_criteria: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    marker = report.keywords.get("acceptance") if hasattr(report, "keywords") else None
    if marker is None:
        return
    name = _names.get(report.nodeid)
    if name is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.setdefault(name, []).append(report.outcome)


_names: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("acceptance")
        if m is not None:
            _names[item.nodeid] = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _criteria.items():
        if all(o == "skipped" for o in outcomes):
            status = "SKIP"
        elif all(o in ("passed", "skipped") for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
