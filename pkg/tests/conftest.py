import logging
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / 'fixtures'


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    # A developer's .env must not leak into the tests
    for name in ('FAIRTEXT_SEED', 'FAIRTEXT_OUT_DIR', 'FAIRTEXT_LOG_LEVEL'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def run_cli(tmp_path, monkeypatch):
    """Runs fairtext.main() with logs redirected to tmp_path; returns the exit code."""
    from fairtext import main

    monkeypatch.setenv('FAIRTEXT_LOG_DIR', str(tmp_path / 'logs'))
    root = logging.getLogger()
    before = list(root.handlers)

    def _run(*argv):
        return main([str(a) for a in argv])

    yield _run
    for handler in root.handlers[:]:
        if handler not in before:
            root.removeHandler(handler)
            handler.close()
