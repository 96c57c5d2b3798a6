"""Shared fixtures for the command-line tests"""

import json
import logging

import pytest
from click.testing import CliRunner

from src.config import Config


@pytest.fixture(autouse=True)
def pchm_home(tmp_path, monkeypatch):
    """Point the settings directory at a fresh temporary home."""
    home = tmp_path / "home"
    home.mkdir()
    (home / "config.json").write_text(json.dumps({"display_mode": "plain"}))
    monkeypatch.setenv("PCHM_HOME", str(home))
    monkeypatch.delenv("PCHM_WORKERS", raising=False)
    return home


@pytest.fixture(autouse=True)
def restore_log_handlers():
    """Drop the handlers each Config attaches to the root logger."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def settings(pchm_home):
    return Config(home=pchm_home)


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment dict as JSON and return its path."""

    def write(payload, name="experiment.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)

    return write


@pytest.fixture
def diagnostic():
    """Parse the JSON diagnostic line of a failed invocation."""

    def parse(output):
        line = next(line for line in output.splitlines() if line.startswith("{"))
        return json.loads(line)

    return parse
