import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from zipsurf.core import DomainError, StructureError, ValidationError, Vec2

from zipsurf.suspension import (
    admissible_permutations,
    build_surface,
    canonical_suspension,
    rotate_surface,
    rotation_reparam,
    rotation_window,
    stratum_combinatorial,
    stratum_geometric,
    validate_suspension,
)


def test_canonical_suspension():
    assert canonical_suspension((2, 1)) == (1, -1)
    assert canonical_suspension((4, 3, 2, 1)) == (3, 1, -1, -3)
    with pytest.raises(ValidationError):
        canonical_suspension((1, 2))


def test_validate_suspension():
    assert validate_suspension((2, 1), [1, -1])
    v = validate_suspension((2, 1), [-1, 1])
    assert not v and (v.side, v.k) == ("top", 1)
    assert validate_suspension((3, 2, 1), [2, 0, -2])


def test_build_examples():
    S = build_surface((2, 1), [1, 1], [1, -1])
    assert S.heights[1:] == (1, 1) and S.area == 2
    assert S.theta[1] == Vec2(1, -1) and S.theta[2] == Vec2(-1, -1)
    S = build_surface((2, 1), [3, 2], [1, -1])
    assert S.heights[1:] == (1, 1) and S.area == 5
    with pytest.raises(ValidationError) as exc:
        build_surface((2, 1), [3, 2], [-1, 1])
    assert exc.value.code == "tau-top"
    with pytest.raises(ValidationError) as exc:
        build_surface((1, 2), [3, 2], [1, -1])
    assert exc.value.code == "perm-admissible"


def _area_from_rectangles(S):
    tot = 0
    for i in range(1, S.d + 1):
        (x0, x1), (y0, y1) = S.top_rect(i)
        tot += (x1 - x0) * (y1 - y0)
    bot = 0
    for j in range(1, S.d + 1):
        (x0, x1), (y0, y1) = S.bottom_rect(j)
        bot += (x1 - x0) * (y1 - y0)
    assert tot == bot
    return tot


def _random_surface(rng, d):
    perms = list(admissible_permutations(d))
    perm = perms[rng.randrange(len(perms))]
    tau = canonical_suspension(perm)
    lam = [Fraction(rng.randrange(1, 1000), 100) for _ in range(d)]
    return build_surface(perm, lam, tau)


@given(st.integers(2, 5), st.integers(0, 10**6))
def test_heights_positive_and_area(d, seed):
    S = _random_surface(random.Random(seed), d)
    assert all(h > 0 for h in S.heights[1:])
    assert S.area == _area_from_rectangles(S) > 0
    # heights from the corner points directly
    for i in range(1, d + 1):
        assert S.heights[i] == S.xt[i].b - S.xb[S.perm(i)].b


def test_strata_anchors():
    assert stratum_combinatorial((2, 1)) == (1,)
    assert stratum_combinatorial((4, 3, 2, 1)) == (3,)
    assert stratum_combinatorial((3, 1, 2)) == (1, 1)
    for perm in [(2, 1), (4, 3, 2, 1), (3, 1, 2)]:
        S = build_surface(perm, [1] * len(perm))
        assert stratum_geometric(S) == stratum_combinatorial(perm)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_strata_agree(d):
    for perm in admissible_permutations(d):
        k = stratum_combinatorial(perm)
        assert sum(k) == d - 1
        assert stratum_geometric(build_surface(perm, [1] * d)) == k


def test_strata_agree_noncanonical():
    rng = random.Random(4)
    for _ in range(30):
        S = _random_surface(rng, rng.randint(3, 5))
        tau = [t + Fraction(rng.randrange(-30, 30), 100) for t in S.tau[1:]]
        if not validate_suspension(S.perm, tau):
            continue
        S2 = build_surface(S.perm, S.lengths[1:], tau)
        assert stratum_geometric(S2) == stratum_combinatorial(S.perm)


def test_rotate_examples():
    S = build_surface((2, 1), [3, 2], [1, -1])
    assert rotate_surface(S, 0) is S
    R = rotate_surface(S, 0.1)
    c, s = math.cos(0.1), math.sin(0.1)
    assert R.lengths[1] == pytest.approx(3 * c - s) and R.lengths[2] == pytest.approx(2 * c + s)
    assert R.tau[1] == pytest.approx(3 * s + c) and R.tau[2] == pytest.approx(2 * s - c)
    assert float(R.area) == pytest.approx(5, abs=1e-12)
    with pytest.raises(DomainError):
        rotate_surface(S, math.pi / 2)


@given(st.integers(0, 10**6), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_rotation_area_and_composition(seed, u1, u2):
    S = _random_surface(random.Random(seed), 3)
    lo, hi = rotation_window(S)
    t1 = lo + (hi - lo) * u1
    t2 = (lo + (hi - lo) * u2 - t1) / 2
    R1 = rotate_surface(S, t1)
    assert float(R1.area) == pytest.approx(float(S.area), rel=1e-12)
    if lo < t1 + t2 < hi:
        try:
            R12 = rotate_surface(R1, t2)
        except DomainError:
            return
        R = rotate_surface(S, t1 + t2)
        for a, b in zip(R12.lengths[1:] + R12.tau[1:], R.lengths[1:] + R.tau[1:]):
            assert a == pytest.approx(b, abs=1e-10)


def test_rotation_window_edges():
    S = build_surface((2, 1), [3, 2], [1, -1])
    lo, hi = rotation_window(S, tol=1e-9)
    rotate_surface(S, lo)
    rotate_surface(S, hi)
    with pytest.raises(DomainError):
        rotate_surface(S, hi + 1e-6)
    with pytest.raises(DomainError):
        rotate_surface(S, lo - 1e-6)


def test_reparam_torus():
    S = build_surface((2, 1), [3, 2], [1, -1])
    th = 0.05
    r = rotation_reparam(S, th)
    assert r.s == pytest.approx(math.tan(th) / 5)
    assert r.alpha == pytest.approx(0.4 + math.tan(th) / 5)
    assert r.v == (-1, 1)
    assert rotation_reparam(S, 0).alpha == pytest.approx(0.4)


@pytest.mark.parametrize("perm", [(2, 1), (3, 1, 2), (2, 3, 1), (4, 1, 2, 3)])
def test_reparam_against_rotated_surface(perm):
    rng = random.Random(len(perm))
    for _ in range(10):
        lam = [Fraction(rng.randrange(50, 150), 100) for _ in perm]
        S = build_surface(perm, lam)
        lo, hi = rotation_window(S)
        th = lo + (hi - lo) * rng.random()
        R = rotate_surface(S, th)
        rp = rotation_reparam(S, th)
        ls = float(R.lam_star)
        assert rp.alpha == pytest.approx(float(R.iet.rotation_number()), abs=1e-12)
        for p in range(1, len(perm) + 1):
            assert rp.top_point(p) == pytest.approx(float(R.iet.ut[p]) / ls, abs=1e-12)
            assert rp.bottom_point(p) == pytest.approx(float(R.iet.ub[p]) / ls, abs=1e-12)


def test_reparam_needs_rotational():
    with pytest.raises(StructureError):
        rotation_reparam(build_surface((4, 3, 2, 1), [1] * 4), 0)
