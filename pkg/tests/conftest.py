import sys

import numpy as np
import pytest

from sce.generator import FeatureVector, Shape


@pytest.fixture
def feature_vector():
    def make(number=1, shade_idx=0, shape=Shape.CIRCLE, size_idx=5, positions=tuple(range(9))):
        return FeatureVector(number, shade_idx, shape, size_idx, tuple(positions))
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
