import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from densityctl.grid import Grid1D, Grid2D  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def g1p():
    return Grid1D(np.pi, 200, "periodic")


@pytest.fixture
def g1r():
    return Grid1D(1.0, 100, "reflective")


@pytest.fixture
def g2p():
    return Grid2D(np.pi, 64, "periodic")


@pytest.fixture
def g2r():
    return Grid2D(1.0, 48, "reflective")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", help="also run reference-scale reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="reference-scale run; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    from verdicts import VERDICTS

    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS, key=lambda k: (not k[0].isdigit(), int(k) if k.isdigit() else 0, k)):
        ok, detail = VERDICTS[key]
        label = f"criterion {key}" if key.isdigit() else key
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
