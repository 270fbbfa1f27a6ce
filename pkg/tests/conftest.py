from fractions import Fraction
from math import gcd

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def lattice_vectors(z1, z2, L, span=200):
    """Primitive combinations a z1 + b z2 of length <= L, by direct scan."""
    out = []
    for a in range(-span, span + 1):
        for b in range(-span, span + 1):
            if gcd(a, b) != 1:
                continue
            v = z1 * a + z2 * b
            if v.norm2() <= L * L:
                out.append(v)
    return sorted(out, key=lambda v: (v.a, v.b))


@pytest.fixture
def torus():
    from zipsurf.suspension import build_surface

    return build_surface((2, 1), [Fraction(1), Fraction(618034, 10**6)],
                         [Fraction(1, 3), Fraction(-1, 2)])


ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
