from fractions import Fraction as F

import pytest
from hypothesis import settings
from hypothesis import strategies as st

from fracweights.params import make_instance

settings.register_profile("default", deadline=None, max_examples=100, derandomize=True)
settings.load_profile("default")

EXPONENTS = (F(4, 3), F(3, 2), F(2), F(3), F(4))
DIMS = ((1,), (1, 1), (1, 2), (2, 1), (1, 1, 1))


@st.composite
def instances(draw, dims=None, formula=True, step=8):
    """Rational instances on a 1/step lattice; gamma solves the formula when asked."""
    dims = draw(st.sampled_from(DIMS)) if dims is None else tuple(dims)
    alpha = [F(draw(st.integers(1, step * d - 1)), step) for d in dims]
    p = draw(st.sampled_from(EXPONENTS))
    q = draw(st.sampled_from([x for x in EXPONENTS if x >= p]))
    delta = F(draw(st.integers(-step, step)), step)
    if formula:
        gamma = sum(alpha) - sum(dims) * (1 / p - 1 / q) - delta
    else:
        gamma = F(draw(st.integers(-step, step)), step)
    return make_instance(dims, alpha, p, q, gamma, delta)


@pytest.fixture
def case_three():
    """Bounded CaseThree instance used throughout the examples."""
    return make_instance((1, 1), ("3/5", "1/5"), 2, 2, "3/10", "1/2")


@pytest.fixture
def case_one_unbounded():
    return make_instance((1, 1), ("3/5", "1/5"), 2, 2, "4/5", 0)


@pytest.fixture
def balanced():
    return make_instance((1, 1), ("1/2", "1/2"), "4/3", 4, 0, 0)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
