from __future__ import annotations

import numpy as np
import pytest

from rawdegrade.raw_core import RawImage
from rawdegrade.synthetic import synthetic_scene

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scene(rng):
    return synthetic_scene(rng, 64, 64)


def constant_raw(value: float, h: int = 16, w: int = 16, bit_depth: int = 12) -> RawImage:
    return RawImage(np.full((4, h, w), float(value)), bit_depth=bit_depth)
