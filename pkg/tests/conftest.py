"""Shared fixtures: seeded random presentations and a high-precision oracle."""

from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import strategies as st

from tropdyn import tropical as tr

mpmath.mp.dps = 50


def random_presentation(rng: np.random.Generator, arity: int = 2, max_terms: int = 4, max_coeff: int = 3):
    """Small-integer exponents (halves allowed) and offsets in [-2, 2]."""

    def terms():
        k = int(rng.integers(1, max_terms + 1))
        return [
            (float(rng.uniform(-2, 2)), [Fraction(int(rng.integers(-2 * max_coeff, 2 * max_coeff + 1)), 2)
                                         for _ in range(arity)])
            for _ in range(k)
        ]

    return tr.MaxPlusPresentation.from_lists(terms(), terms())


def oracle_dequantized(pres, t, x) -> float:
    """``log_t`` of the two elementary sums in 50-digit arithmetic."""
    t = mpmath.mpf(t)

    def lse(terms):
        total = mpmath.mpf(0)
        for term in terms:
            e = mpmath.mpf(term.offset) + mpmath.fsum(mpmath.mpf(c.numerator) / c.denominator * mpmath.mpf(xi)
                                                       for c, xi in zip(term.coeffs, x))
            total += mpmath.power(t, e)
        return mpmath.log(total, t)

    return float(lse(pres.num) - lse(pres.den))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@st.composite
def presentations(draw, arity: int = 2):
    def term():
        coeffs = [Fraction(draw(st.integers(-6, 6)), 2) for _ in range(arity)]
        return (draw(st.floats(-3, 3, allow_nan=False)), coeffs)

    num = [term() for _ in range(draw(st.integers(1, 4)))]
    den = [term() for _ in range(draw(st.integers(1, 4)))]
    return tr.MaxPlusPresentation.from_lists(num, den)


# -- acceptance summary ---------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
