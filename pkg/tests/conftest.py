"""Shared fixtures: cached synthetic charts so modules reuse one generation."""

import functools

import numpy as np
import pytest

from chartkp.errors import LayoutOverflow
from chartkp.synthgen import generate
from chartkp.types import ChartType


@functools.lru_cache(maxsize=None)
def synth_chart(chart_type: str, seed: int, canvas=(256, 256)):
    """First chart at or after ``seed`` that lays out without overflow."""
    ct = ChartType(chart_type)
    for s in range(seed, seed + 50):
        try:
            return generate(ct, s, canvas)
        except LayoutOverflow:
            continue
    raise RuntimeError("no chart laid out")


@pytest.fixture
def make_chart():
    return synth_chart


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# one "PASS/FAIL <criterion>: <detail>" line per acceptance criterion
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
