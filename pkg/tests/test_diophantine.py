import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zipsurf.core import DomainError, PhiSpec, ValidationError, Vec2, det2
from zipsurf.diophantine import (
    atom_interval,
    atom_length,
    cf_expand,
    decade_counts,
    filtration_decompose,
    fractional_gap,
    frac_values,
    frac_values_exact,
    fundamental_rep,
    hat,
    quadratic,
    random_dyadic,
    random_quadratic,
    twisted_khinchin_scan,
    twisted_step,
    upsilon,
)

GOLDEN = quadratic(1, 5, 2)
positive_fractions = st.fractions(min_value=Fraction(1, 97), max_value=50, max_denominator=10**6)


def test_cf_eleven_quarters():
    conv = cf_expand(Fraction(11, 4), 20)
    assert [c.a for c in conv] == [2, 1, 3]
    assert [c.r for c in conv] == [Vec2(1, 2), Vec2(1, 3), Vec2(4, 11)]


def test_cf_one_third():
    conv = cf_expand(Fraction(1, 3), 20)
    assert [c.a for c in conv] == [0, 3]
    assert conv[0].r == Vec2(1, 0) and conv[1].r == Vec2(3, 1)


def test_cf_golden_fibonacci():
    conv = cf_expand(GOLDEN, 60)
    assert all(c.a == 1 for c in conv)
    fib = [1, 1]
    while len(fib) < len(conv):
        fib.append(fib[-1] + fib[-2])
    assert [c.q for c in conv] == fib
    for c in conv[:16]:
        assert atom_length(c) == Fraction(1, c.q * c.r_prime.a)


def test_cf_rejects_nonpositive():
    with pytest.raises(DomainError):
        cf_expand(Fraction(-1, 2), 5)


def test_atom_interval_level_zero():
    c = cf_expand(Fraction(5, 2) + Fraction(1, 10**6), 3)[0]
    assert atom_interval(c) == (2, 3) and atom_length(c) == 1


def _brute_cf(x: Fraction):
    out = []
    while True:
        a = math.floor(x)
        out.append(a)
        if x == a:
            return out
        x = 1 / (x - a)


@given(positive_fractions)
def test_cf_matches_euclid(x):
    conv = cf_expand(x, 200)
    assert [c.a for c in conv] == _brute_cf(x) or (
        # a trailing quotient 1 merges into its predecessor in the classical form
        [c.a for c in conv][:-1] == _brute_cf(x)[:-2] + [_brute_cf(x)[-2] + 1])
    assert Fraction(conv[-1].p, conv[-1].q) == x


@given(positive_fractions)
def test_cf_identities(x):
    conv = cf_expand(x, 200)
    ah = hat(x)
    for c in conv:
        assert abs(det2(c.r, c.r_prime)) == 1
        if c.q > 0:
            assert atom_length(c) == Fraction(1, c.q * c.r_prime.a)
    for c in conv[:-1]:
        # even convergents lie below alpha, odd ones above
        s = det2(c.r, ah)
        assert (s > 0) if c.n % 2 == 0 else (s < 0)
    for u, w in zip(conv, conv[2:]):
        assert w.q ** 2 > 2 * u.q ** 2
    for c in conv[2:]:
        inner = Fraction(1, c.r_prime.a * (c.r_prime.a + c.q))
        assert 1 < atom_length(c) / inner < 3


def test_quadratic_identities_depth_30():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = random_quadratic(rng, prec=512)
        conv = cf_expand(a, 30)
        assert len(conv) == 31
        for c in conv:
            assert abs(det2(c.r, c.r_prime)) == 1
        for u, w in zip(conv, conv[2:]):
            assert w.q ** 2 > 2 * u.q ** 2


def test_growth_rate_of_denominators():
    rng = np.random.default_rng(40)
    ok = 0
    for _ in range(100):
        x = Fraction(int(rng.integers(1, 2 ** 62)), 2 ** 62) + Fraction(1, 2 ** 70 + 1)
        conv = cf_expand(x, 40)
        ok += len(conv) > 40 and 2 <= conv[40].q ** (1 / 40) <= 5
    assert ok >= 90


# filtration


def test_filtration_single_atom():
    f = filtration_decompose((Fraction(1, 3), Fraction(1, 2)), 5)
    assert f.index == 1
    assert f.pieces == {1: [(Fraction(1, 3), Fraction(1, 2))]}
    assert f.remainder[1] == 0


def test_filtration_straddling():
    f = filtration_decompose((Fraction(3, 10), Fraction(7, 10)), 6)
    assert f.index == 1
    assert (Fraction(1, 3), Fraction(1, 2)) in f.pieces[1]
    assert f.remainder[1] == Fraction(7, 30)
    assert 0 < f.remainder[1] < f.total


def test_filtration_depth_too_small():
    with pytest.raises(DomainError):
        filtration_decompose((Fraction(1, 1000), Fraction(1, 999)), 0)


def _atom_of(x: Fraction, n: int):
    conv = cf_expand(x, n)
    if len(conv) <= n:
        return None
    return atom_interval(conv[n])


def test_filtration_against_atom_oracle():
    rng = random.Random(3)
    for _ in range(8):
        a, b = sorted(Fraction(rng.randrange(1, 4000), rng.randrange(1, 4000)) for _ in range(2))
        if a == b:
            continue
        depth = 5
        f = filtration_decompose((a, b), depth)
        for _ in range(60):
            x = a + (b - a) * Fraction(rng.randrange(1, 10**9), 10**9)
            for n in range(depth + 1):
                atom = _atom_of(x, n)
                if atom is None:
                    break
                covered = a <= atom[0] and atom[1] <= b
                in_piece = any(lo < x < hi for k in range(n + 1) for lo, hi in f.pieces.get(k, []))
                assert covered == in_piece, (a, b, x, n)


def test_filtration_remainder_decays():
    rng = random.Random(7)
    for _ in range(20):
        a, b = sorted(Fraction(rng.randrange(1, 10**6), 10**6) * 3 for _ in range(2))
        f = filtration_decompose((a, b), 14)
        levels = sorted(f.remainder)
        vals = [f.remainder[k] for k in levels]
        assert all(u >= w for u, w in zip(vals, vals[1:]))
        pos = [(k, float(v)) for k, v in zip(levels, vals) if v > 0]
        if len(pos) >= 3:
            slope = np.polyfit([k for k, _ in pos], [math.log(v) for _, v in pos], 1)[0]
            assert slope < 0


# twisted approximations


def _brute_rep(r, rp, v):
    # the cell s r + t r' (s, t in (0, 1]) sits in the box [0, r + r']
    hits = []
    D = det2(r, rp)
    for i in range(-1, r.a + rp.a + 1):
        for j in range(-1, r.b + rp.b + 1):
            w = Vec2(v.a + i, v.b + j)
            s, t = det2(w, rp) / D, det2(r, w) / D
            if 0 < s <= 1 and 0 < t <= 1:
                hits.append(w)
    return hits


@given(positive_fractions, st.fractions(0, 1, max_denominator=64), st.fractions(0, 1, max_denominator=64))
@settings(max_examples=30)
def test_fundamental_rep_matches_search(alpha, x, y):
    conv = cf_expand(alpha, 3)
    for c in conv[:3]:
        v = Vec2(x, y)
        assert _brute_rep(c.r, c.r_prime, v) == [
            fundamental_rep(c.r, c.r_prime, v)]


def test_fundamental_rep_origin_and_example():
    r, rp = Vec2(1, 1), Vec2(1, 2)
    assert fundamental_rep(r, rp, Vec2(0, 0)) == r + rp
    v = Vec2(Fraction(1, 2), Fraction(1, 2))
    assert [fundamental_rep(r, rp, v)] == _brute_rep(r, rp, v)


def test_twisted_golden():
    t = twisted_step(GOLDEN, Vec2(0, 0), 3, 1)
    assert t.base.r == Vec2(1, 1) and t.base.r_prime == Vec2(1, 2)
    assert t.rep == Vec2(2, 3)
    assert t.branch == 2 and t.nu == 0
    assert t.s == Vec2(2, 3) and t.s_prime == Vec2(3, 5)
    assert t.det() == 1
    assert float(det2(t.s, hat(GOLDEN))) == pytest.approx(0.2360679775, abs=1e-10)
    assert float(upsilon(t, GOLDEN)) == pytest.approx(3 * (math.sqrt(5) - 2), abs=1e-12)
    assert fractional_gap(t, GOLDEN) < 1e-12


def test_twisted_first_branch():
    a = Fraction(7, 5)
    t = twisted_step(a, Vec2(0, 0), 3, 1)
    assert t.branch == 1 and t.nu == 1
    assert t.s == Vec2(3, 4) and t.s_prime == Vec2(2, 3)


def test_twisted_needs_n_at_least_three():
    with pytest.raises(ValidationError):
        twisted_step(GOLDEN, Vec2(0, 0), 2, 1)


def test_twisted_invariants_random():
    rng = np.random.default_rng(8)
    for _ in range(200):
        a = random_quadratic(rng)
        v = Vec2(random_dyadic(rng, 20), random_dyadic(rng, 20))
        for n in (1, 2, 3):
            t = twisted_step(a, v, 3, n)
            ah = hat(a)
            assert det2(t.s, ah) > 0 > det2(t.s_prime, ah)
            assert 0 < t.det() <= 1
            assert fractional_gap(t, a) < 1e-12
            assert 0 <= upsilon(t, a) < 1
            assert t.s == Vec2(t.k + v.a, t.j + v.b)
            lo, hi = sorted([Fraction(t.s.b) / Fraction(t.s.a), Fraction(t.s_prime.b) / Fraction(t.s_prime.a)])
            assert filtration_decompose((lo, hi), 2 * 3 * (n - 1) + 4).index <= 2 * 3 * (n - 1) + 3


# Khinchin scans for {(n + x) alpha - y}


def test_uint64_path_matches_exact():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, x, y = random_dyadic(rng, 40), random_dyadic(rng, 20), random_dyadic(rng, 60)
        fast = frac_values(a, x, y, 2000)
        slow = [float(v) for v in frac_values_exact(a, x, y, 2000)]
        assert list(fast) == slow


def test_golden_scan_near_fibonacci():
    g = Fraction(1618033988749895, 10**15)
    scan = twisted_khinchin_scan(g, Vec2(0, 0), PhiSpec(1, 1, 0), 10**5, method="direct")
    fib = [1, 2]
    while fib[-1] < 2 * 10**5:
        fib.append(fib[-1] + fib[-2])
    assert scan.direct
    assert all(min(abs(n - f) for f in fib) <= 1 for n in scan.direct)
    assert set(fib[3:20]) & set(scan.direct)


def test_golden_twisted_flags_are_solutions():
    scan = twisted_khinchin_scan(GOLDEN, Vec2(0, 0), PhiSpec(1, 1, 0), 10**5, method="both")
    assert scan.twisted
    assert set(scan.twisted) <= set(scan.direct)


def test_large_constant_gives_almost_everything():
    a = random_dyadic(np.random.default_rng(1), 40)
    scan = twisted_khinchin_scan(a, Vec2(0, 0), PhiSpec(10, 1, 0), 1000, method="direct")
    vals = frac_values(a, 0, 0, 1000)
    phi = [10 / (n + 2) for n in range(1, 1001)]
    assert len(scan.direct) == sum(v < p for v, p in zip(vals, phi))
    assert all(n in scan.direct for n in range(1, 9))


def test_flagged_subset_of_direct_random():
    rng = np.random.default_rng(11)
    for _ in range(40):
        a, x, y = random_dyadic(rng, 40), random_dyadic(rng, 20), random_dyadic(rng, 60)
        scan = twisted_khinchin_scan(a, Vec2(x, y), PhiSpec(1, 1, 0), 10**5)
        assert set(scan.twisted) <= set(scan.direct)


def test_decade_counts():
    assert decade_counts([1, 2, 10, 11, 100, 101, 1000], 3) == [2, 2, 2]


def test_random_dyadic_range():
    rng = np.random.default_rng(0)
    for bits in (5, 20, 40, 60, 62):
        for _ in range(50):
            d = random_dyadic(rng, bits)
            assert 0 < d < 1
            assert d.denominator <= 2 ** (bits + 1)
