import json

import pytest

from tiered_memory import Engine, EngineConfig, Gateway, MockBackend, PageStore, Turn
from tiered_memory import demo
from tiered_memory.tokens import estimate_tokens


def make_gateway(entries=(), **kw):
    return Gateway(MockBackend(list(entries)), retry_backoff=0.0, **kw)


def sticky(kind, response, match="", **kw):
    if not isinstance(response, str):
        response = json.dumps(response)
    return {"kind": kind, "match": match, "response": response, "sticky": True, **kw}


def fill_store(texts, session="s", max_page_tokens=1000):
    """One page per text (each flushed), so tests control page content exactly."""
    store = PageStore(max_page_tokens)
    ids = []
    for i, text in enumerate(texts):
        store.append_turn(session, Turn(f"2024-01-{i + 1:02d}", "A", text))
        ids.append(store.flush(session))
    return store, ids


@pytest.fixture
def demo_engine():
    engine = Engine(EngineConfig(), make_gateway(demo.script()))
    engine.ingest(demo.SESSION, demo.transcript())
    return engine


@pytest.fixture
def demo_files(tmp_path):
    return demo.write_files(tmp_path / "demo")


__all__ = ["make_gateway", "sticky", "fill_store", "estimate_tokens"]


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
