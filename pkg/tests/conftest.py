import numpy as np
import pytest
from hypothesis import strategies as st

from egm.biquat import Biquaternion

finite = st.floats(min_value=-10, max_value=10, allow_nan=False, allow_infinity=False)
complexes = st.builds(complex, finite, finite)
biquats = st.builds(lambda s, a, b, c: Biquaternion(s, [a, b, c]), complexes, complexes, complexes, complexes)


def close(a, b, tol=1e-12):
    """Relative closeness of two biquaternions (or arrays) in the max norm."""
    a = a.as_array() if isinstance(a, Biquaternion) else np.asarray(a)
    b = b.as_array() if isinstance(b, Biquaternion) else np.asarray(b)
    scale = max(1.0, float(np.max(np.abs(a), initial=0)), float(np.max(np.abs(b), initial=0)))
    return float(np.max(np.abs(a - b), initial=0)) <= tol * scale


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = []


def record_acceptance(number, title, passed, detail):
    """Store one acceptance line; all lines are echoed in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2} {title}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
