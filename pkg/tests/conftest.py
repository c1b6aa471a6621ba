from pathlib import Path

import numpy as np
import pytest

from fedmup.dataset import NormStats
from fedmup.fed import GlobalModel
from fedmup.model import NetworkSpec, ParameterVector

DATA = Path(__file__).parent / "data"

# feature maxima of the default generator; minima are 0
RULE_MAX = np.array([6, 320, 5, 40, 1, 1, 12, 20, 14, 25, 2, 5], dtype=float)


def rule_model() -> GlobalModel:
    """Hand-weighted AFed net: malicious iff leak_count + leak_ratio + 0.5*leaked_records
    (all scaled) exceeds 2/3; unknown when there is no historical data."""
    spec = NetworkSpec.for_variant("afed")
    w1 = np.zeros((12, 16))
    b1 = np.zeros(16)
    w1[6, 0] = 1.0   # leak_count
    w1[9, 0] = 1.0   # leak_ratio
    w1[5, 0] = 0.5   # leaked_records
    w1[4, 1] = -1.0  # historical_data
    b1[1] = 0.5
    w2 = np.zeros((16, 3))
    b2 = np.zeros(3)
    w2[0, 0] = 6.0
    b2[0] = -4.0
    w2[1, 2] = 10.0
    b2[2] = -1.0
    values = np.concatenate([w1.ravel(), b1, w2.ravel(), b2])
    stats = NormStats(np.zeros(12), RULE_MAX.copy())
    return GlobalModel(ParameterVector(values, spec.fingerprint), spec, 0, stats)


@pytest.fixture
def rule_global() -> GlobalModel:
    return rule_model()


@pytest.fixture
def data_dir() -> Path:
    return DATA


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
