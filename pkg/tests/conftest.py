import os

# allow more numba threads than cores so thread-count determinism is testable
os.environ.setdefault("NUMBA_NUM_THREADS", "4")
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import math  # noqa: E402
from fractions import Fraction  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402


def exact_binom_cdf(k: int, n: int, p) -> Fraction:
    """Brute-force ``P(Bin(n, p) <= k)`` in rational arithmetic."""
    p = Fraction(p)
    return sum((math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(0, k + 1)), Fraction(0))


def brute_conformal_index(n: int, delta) -> int:
    """Smallest integer k with k >= (1 - delta)(n + 1), by counting up."""
    target = (1 - Fraction(repr(float(delta)))) * (n + 1)
    k = 0
    while k < target:
        k += 1
    return k


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion, then assert."""

    def check(label: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{label}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, f"{label}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
