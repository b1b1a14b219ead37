import os
from pathlib import Path

import numpy as np
import pytest

from trajforge import synthetic
from trajforge.datasets import BENCHMARK_DATASETS, TrajectoryWindow

PKG_ROOT = Path(__file__).resolve().parents[1]

# acceptance criterion -> (verdict, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, tuple[str, str]] = {}


def benchmark_root() -> Path | None:
    """ETH-UCY root if the real files are on disk, else None."""
    root = Path(os.environ.get("TRAJFORGE_DATA", PKG_ROOT / "data" / "eth_ucy"))
    if all((root / name).is_dir() for name in BENCHMARK_DATASETS):
        return root
    return None


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory):
    return synthetic.write_synthetic_benchmark(tmp_path_factory.mktemp("synthetic"), seed=0)


def make_window(obs, future=None, scene="s", start=0):
    obs = np.asarray(obs, dtype=float)
    if future is None:
        future = np.zeros((obs.shape[0], 12, 2))
    return TrajectoryWindow(scene, start, obs, np.asarray(future, dtype=float), list(range(obs.shape[0])))


@pytest.fixture
def window_factory():
    return make_window


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        verdict, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{verdict}] criterion {key}: {detail}")
