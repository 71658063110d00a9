from __future__ import annotations

"""Pytest configuration.

The package lives in the local "src" folder; tests import it from there so that
`pytest` works without a prior `pip install -e .`. Settings and the run journal are
redirected into a per-test temporary directory.
"""

import sys
from pathlib import Path

import numpy as np
import pytest


ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    from sigmaflow.infra import journal, settings

    config_dir = tmp_path / "config"
    data_dir = tmp_path / "data"
    monkeypatch.setattr(settings, "user_config_dir", lambda *a, **k: str(config_dir))
    monkeypatch.setattr(settings, "user_data_dir", lambda *a, **k: str(data_dir))
    monkeypatch.setattr(journal, "user_data_dir", lambda *a, **k: str(data_dir))
    monkeypatch.delenv("SIGMAFLOW_THREADS", raising=False)
    return tmp_path
