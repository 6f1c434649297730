from __future__ import annotations

import json
from pathlib import Path

import pytest

from glider.harness import default_pool, make_queries

FIXTURES = Path(__file__).parent / "fixtures"
ACCEPTANCE_SEEDS = (0, 1, 2, 3, 4)

_acceptance_lines: list[str] = []


@pytest.fixture(scope="session")
def goldens() -> dict:
    return json.loads((FIXTURES / "goldens.json").read_text())


class _TrainedSuites:
    """Lazily trains the default pool per seed and shares it across tests."""

    def __init__(self):
        self._data = {}

    def __call__(self, seed: int):
        if seed not in self._data:
            pool, suite = default_pool(seed)
            self._data[seed] = (pool, suite, make_queries(suite, seed=seed))
        return self._data[seed]


@pytest.fixture(scope="session")
def trained():
    return _TrainedSuites()


@pytest.fixture(scope="session")
def reports(trained):
    from glider.harness import evaluate

    cache = {}

    def get(seed):
        if seed not in cache:
            pool, suite, queries = trained(seed)
            cache[seed] = evaluate(pool, suite, queries=queries, seed=seed)
        return cache[seed]

    return get


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(name: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        print(line)
        _acceptance_lines.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
