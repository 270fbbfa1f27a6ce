"""Continued fractions in the determinant order and twisted approximations.

Vectors (q, p) are compared with the direction (1, alpha) through
det[v, w] = v.a * w.b - v.b * w.a: v precedes w when the determinant is
positive, i.e. when v has the smaller slope.  Rational alpha is handled
exactly; float or mpmath alpha refuses any decision whose determinant is
within eps of zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np

from .core import (
    UNCERTAIN,
    Backend,
    DomainError,
    PhiSpec,
    StructureError,
    UncertainComparison,
    ValidationError,
    Vec2,
    det2,
    float_backend,
    phi_array,
    phi_eval,
)


def _backend_for(alpha, eps=None) -> Backend:
    if isinstance(alpha, (Fraction, int)):
        return Backend("rational")
    if isinstance(alpha, float):
        return float_backend(53, eps or 1e-12)
    prec = alpha.context.prec
    return Backend("float", prec=prec, eps=eps or float(mpmath.mpf(2) ** (-(prec // 2))))


def hat(alpha) -> Vec2:
    return Vec2(1, alpha)


# ---------------------------------------------------------------------------
# classical expansion


@dataclass(frozen=True)
class Convergent:
    n: int
    r: Vec2  # (q_n, p_n)
    r_prime: Vec2  # r_n + r_{n-1}
    a: Optional[int]  # partial quotient; None for the seeds n = -2, -1

    @property
    def q(self) -> int:
        return self.r.a

    @property
    def p(self) -> int:
        return self.r.b


_SEEDS = (Vec2(1, 0), Vec2(0, 1))


def cf_expand(alpha, depth: int, eps: float = None) -> List[Convergent]:
    """Convergents r_0 .. r_depth of alpha (fewer if alpha is rational).

    a_n is the largest integer with a r_{n-1} + r_{n-2} on the same side of
    (1, alpha) as required by the parity of n; it is the floor of
    -det[r_{n-2}, a^] / det[r_{n-1}, a^].  When that ratio is an integer the
    new vector is parallel to (1, alpha) and the expansion stops.
    """
    if not alpha > 0:
        raise DomainError("continued fractions need alpha > 0", alpha=alpha)
    b = _backend_for(alpha, eps)
    ah = hat(alpha)
    prev2, prev1 = _SEEDS
    out = []
    for n in range(depth + 1):
        d1 = det2(prev1, ah)
        d2 = det2(prev2, ah)
        ratio = -d2 / d1
        a = int(math.floor(ratio)) if b.exact else int(ratio.context.floor(ratio))
        if n > 0 and a < 1:
            raise StructureError("partial quotient below 1", n=n)
        for k in (a, a + 1):
            s = b.sign(det2(prev1 * k + prev2, ah))
            if s is UNCERTAIN:
                raise UncertainComparison(
                    f"comparison at depth {n} is within eps", n=n, eps=b.eps)
        r = prev1 * a + prev2
        out.append(Convergent(n, r, r + prev1, a))
        if b.exact and ratio == a:
            break
        prev2, prev1 = prev1, r
    return out


def atom_interval(c: Convergent) -> Tuple[Fraction, Fraction]:
    """The open interval of alpha sharing this convergent, as (lo, hi)."""
    if c.q <= 0 or c.r_prime.a <= 0:
        raise DomainError("atom endpoints need q_n, q'_n > 0")
    x = Fraction(c.p, c.q)
    y = Fraction(c.r_prime.b, c.r_prime.a)
    return (x, y) if x < y else (y, x)


def atom_length(c: Convergent) -> Fraction:
    lo, hi = atom_interval(c)
    return hi - lo


def next_atom_length(c: Convergent, prev_q: int) -> Fraction:
    """Length of the neighbouring atom of the same level, spanned by r'_n."""
    q1 = c.r_prime.a
    return Fraction(1, q1 * (q1 + prev_q))


# ---------------------------------------------------------------------------
# filtration by atoms


@dataclass(frozen=True)
class Filtration:
    index: int  # first level with a non-empty piece
    pieces: Dict[int, List[Tuple[Fraction, Fraction]]]  # level -> intervals of J_n
    remainder: Dict[int, Fraction]  # level -> measure of J minus J_0..J_n
    total: Fraction
    partial: Dict[int, List[Tuple[Fraction, Fraction]]]  # level -> atoms meeting J only in part


def _slope(v: Vec2) -> Fraction:
    return Fraction(v.b, v.a) if v.a else None


def filtration_decompose(J: Tuple, depth: int) -> Filtration:
    """Split J into the pieces J_n made of whole level-n atoms.

    An atom of level n + 1 inside the level-n atom (r, r_prev) is spanned by
    c_a = a r + r_prev and c_(a+1), a >= 1 (a >= 0 at level 0).  Atoms lying
    in J are taken whole; only atoms meeting an endpoint of J are refined, so
    each level adds at most two partial atoms.  The children in J form a run
    of consecutive a, possibly infinite, which is summed in closed form.
    """
    lo, hi = Fraction(J[0]), Fraction(J[1])
    if not (0 <= lo < hi):
        raise DomainError("J must be a bounded interval in the positive half-line")
    pieces: Dict[int, List[Tuple[Fraction, Fraction]]] = {}
    partial_atoms: Dict[int, List[Tuple[Fraction, Fraction]]] = {}
    partial = [(Vec2(0, 1), Vec2(1, 0), 0)]  # (r, r_prev, minimal a)
    for level in range(depth + 1):
        nxt = []
        got = []
        for r, rp, amin in partial:
            lo_a, hi_a, parts = _children_in(r, rp, amin, lo, hi)
            if lo_a is not None:
                got.append(_run_interval(r, rp, lo_a, hi_a))
            for a in parts:
                nxt.append((r * a + rp, r, 1))
                partial_atoms.setdefault(level, []).append(_atom(r, rp, a))
        if got:
            pieces[level] = sorted(got)
        partial = _dedup(nxt)
        if not partial:
            break
    if not pieces:
        raise DomainError("depth too small to locate the first level", depth=depth)
    index = min(pieces)
    total = hi - lo
    rem, acc = {}, Fraction(0)
    for level in range(index, depth + 1):
        acc += sum(b - a for a, b in pieces.get(level, []))
        rem[level] = total - acc
    return Filtration(index, pieces, rem, total, partial_atoms)


def _dedup(items):
    seen, out = set(), []
    for it in items:
        key = (it[0], it[1])
        if key not in seen:
            seen.add(key)
            out.append(it)
    return out


def _atom(r: Vec2, rp: Vec2, a: int) -> Tuple[Fraction, Fraction]:
    x, y = _slope(r * a + rp), _slope(r * (a + 1) + rp)
    return (x, y) if x < y else (y, x)


def _index_at(r: Vec2, rp: Vec2, x: Fraction):
    """The real a* with slope(a* r + rp) = x (None when x is the limit slope)."""
    den = x * r.a - r.b
    if den == 0:
        return None
    return (rp.b - x * rp.a) / den


def _children_in(r: Vec2, rp: Vec2, amin: int, lo: Fraction, hi: Fraction):
    """(first, last, partial) for the children of (r, rp) relative to (lo, hi).

    Children a in [first, last] lie inside [lo, hi] (last may be math.inf);
    ``partial`` lists children containing lo or hi in their interior.
    The slope of a r + rp is monotone in real a >= amin, so the children
    inside form one run delimited by the real indices of lo and hi.
    """
    limit = _slope(r)  # None means +infinity
    start = _slope(r * amin + rp)
    rng_lo = start if limit is None else min(start, limit)
    rng_hi = None if limit is None else max(start, limit)
    x1 = max(lo, rng_lo)
    x2 = hi if rng_hi is None else min(hi, rng_hi)
    if x1 >= x2:
        return None, None, []
    idx = []
    for x in (x1, x2):
        s = math.inf if x == limit else _index_at(r, rp, x)
        idx.append(s)
    A1, A2 = sorted(idx)
    first = max(amin, math.ceil(A1))
    last = math.inf if A2 == math.inf else math.floor(A2) - 1
    run = (first, last) if last >= first else (None, None)
    parts = []
    for x in (lo, hi):
        if not (rng_lo < x and (rng_hi is None or x < rng_hi)):
            continue
        s = _index_at(r, rp, x)
        if s is not None and s != math.floor(s):
            parts.append(math.floor(s))
    return run[0], run[1], parts


def _run_interval(r: Vec2, rp: Vec2, a1: int, a2) -> Tuple[Fraction, Fraction]:
    x = _slope(r * a1 + rp)
    y = _slope(r) if a2 == math.inf else _slope(r * (a2 + 1) + rp)
    return (x, y) if x < y else (y, x)


# ---------------------------------------------------------------------------
# twisted approximations


def fundamental_rep(r: Vec2, r_prime: Vec2, v: Vec2) -> Vec2:
    """The unique point of Z^2 + v of the form s r + t r' with s, t in (0, 1]."""
    D = det2(r, r_prime)
    if abs(D) != 1:
        raise DomainError("the basis must be unimodular", det=D)
    s0 = det2(v, r_prime) * D
    t0 = det2(r, v) * D
    s = s0 - (_ceil(s0) - 1)
    t = t0 - (_ceil(t0) - 1)
    return r * s + r_prime * t


def _ceil(x) -> int:
    if isinstance(x, (Fraction, int)):
        return math.ceil(x)
    return int(x.context.ceil(x))


def _floor(x) -> int:
    if isinstance(x, (Fraction, int)):
        return math.floor(x)
    return int(x.context.floor(x))


@dataclass(frozen=True)
class TwistedApprox:
    n: int
    v: Vec2
    N: int
    base: Convergent
    rep: Vec2  # the coset representative in the base cell
    nu: int
    s: Vec2
    s_prime: Vec2
    k: int
    j: int
    k_prime: int
    j_prime: int
    branch: int  # 1 when alpha lies between r and rep, 2 otherwise

    def det(self):
        return det2(self.s, self.s_prime)


def twisted_step(alpha, v: Vec2, N: int, n: int, eps: float = None,
                 convergents: Sequence[Convergent] = None) -> TwistedApprox:
    if N < 3:
        raise ValidationError("the twisted step needs N >= 3", code="twisted-N")
    if n < 1:
        raise DomainError("n must be >= 1")
    m = 2 * N * (n - 1)
    conv = convergents if convergents is not None else cf_expand(alpha, m, eps)
    if len(conv) <= m:
        raise StructureError("alpha is rational: the expansion stops before the base index",
                             needed=m, got=len(conv) - 1)
    base = conv[m]
    b = _backend_for(alpha, eps)
    ah = hat(alpha)
    r, rp = base.r, base.r_prime
    rep = fundamental_rep(r, rp, v)
    dv = det2(rep, ah)
    sg = b.sign(dv)
    if sg is UNCERTAIN or sg == 0:
        raise DomainError("a coset point lies on the direction of alpha", code="not-generic")
    if sg < 0:
        # r < alpha < rep: least nu with rep + nu r before alpha
        x = -dv / det2(r, ah)
        nu = _floor(x) + 1
        s = rep + r * nu
        s_prime = s - r
        branch = 1
    else:
        x = dv / -det2(rp, ah)
        c = _ceil(x)
        if b.exact and x == c:
            raise DomainError("a coset point lies on the direction of alpha", code="not-generic")
        nu = c - 1
        s = rep + rp * nu
        s_prime = s + rp
        branch = 2
    for w in (s, s_prime):
        if b.sign(det2(w, ah)) is UNCERTAIN:
            raise UncertainComparison("twisted step comparison within eps", n=n)
    k, j = _floor(s.a - v.a + Fraction(1, 2)), _floor(s.b - v.b + Fraction(1, 2))
    k2, j2 = _floor(s_prime.a - v.a + Fraction(1, 2)), _floor(s_prime.b - v.b + Fraction(1, 2))
    return TwistedApprox(n, v, N, base, rep, nu, s, s_prime, k, j, k2, j2, branch)


def upsilon(t: TwistedApprox, alpha):
    """Affine coordinate of alpha on the atom of s_n, in [0, 1)."""
    return (t.k_prime + t.v.a) / t.det() * det2(t.s, hat(alpha))


def frac(x):
    if isinstance(x, (Fraction, int)):
        return x - math.floor(x)
    if isinstance(x, float):
        return x - math.floor(x)
    # floor in the value's own context: the global one may be coarser
    return x - x.context.floor(x)


def fractional_gap(t: TwistedApprox, alpha) -> float:
    """|det[s_n, alpha^] - {(k_n + x) alpha - y}|."""
    lhs = det2(t.s, hat(alpha))
    rhs = frac((t.k + t.v.a) * alpha - t.v.b)
    return abs(float(lhs - rhs))


# ---------------------------------------------------------------------------
# Khinchin scans for {(n + x) alpha - y}


def frac_values_exact(alpha, x, y, n_max: int) -> List:
    """{(n + x) alpha - y} for n = 1..n_max in the arithmetic of alpha."""
    return [frac((n + x) * alpha - y) for n in range(1, n_max + 1)]


def _dyadic_bits(x) -> Optional[int]:
    if not isinstance(x, (Fraction, int)):
        return None
    x = Fraction(x)
    d = x.denominator
    if d & (d - 1):
        return None
    return d.bit_length() - 1


def frac_values(alpha, x, y, n_max: int) -> np.ndarray:
    """{(n + x) alpha - y}, n = 1..n_max, as float64.

    Dyadic alpha, x, y whose bit counts fit (bits(alpha) + bits(x) and bits(y)
    at most 62) are evaluated exactly with unsigned 64-bit integers modulo
    2^K and only rounded at the end; anything else uses the arithmetic of
    alpha, one term at a time.
    """
    ba, bx, by = _dyadic_bits(alpha), _dyadic_bits(x), _dyadic_bits(y)
    if None not in (ba, bx, by) and ba + bx <= 62 and by <= 62:
        K = max(ba + bx, by)
        M = 1 << K
        A = int(Fraction(alpha) * M) % M  # alpha mod 1 times 2^K
        C = int((Fraction(x) * Fraction(alpha) - Fraction(y)) * M) % M
        n = np.arange(1, n_max + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            vals = (n * np.uint64(A) + np.uint64(C)) & np.uint64(M - 1)
        return vals.astype(np.float64) / float(M)
    return np.array([float(t) for t in frac_values_exact(alpha, x, y, n_max)])


@dataclass(frozen=True)
class TwistedFlag:
    m: int
    k: int
    upsilon: float
    psi: float
    bound: float
    flagged: bool  # upsilon below both psi and the exact bound
    psi_fires: bool  # upsilon below psi alone


@dataclass(frozen=True)
class TwistedScan:
    direct: Optional[List[int]]
    flags: Optional[List[TwistedFlag]]

    @property
    def twisted(self) -> List[int]:
        return sorted({f.k for f in self.flags or [] if f.flagged})


def psi_sequence(phi: PhiSpec, m: int, gamma: float = 1.1) -> float:
    u = math.exp(gamma * m)
    return u * float(phi_eval(phi, u))


def direct_solutions(alpha, v: Vec2, phi: PhiSpec, n_max: int) -> List[int]:
    vals = frac_values(alpha, v.a, v.b, n_max)
    ph = phi_array(phi, np.arange(1, n_max + 1, dtype=float))
    return [int(k) for k in np.nonzero(vals < ph)[0] + 1]


def twisted_flags(alpha, v: Vec2, phi: PhiSpec, n_max: int, N: int = 3,
                  gamma: float = 1.1, eps: float = None) -> List[TwistedFlag]:
    """Twisted approximations s_m while k_m <= n_max, with their tests.

    n = k_m is flagged when Upsilon is below psi_m and below the exact bound
    (k'_m + x) phi(k_m) / det[s_m, s'_m]; the latter is equivalent to
    {(k_m + x) alpha - y} < phi(k_m), so flagged values are solutions.
    """
    out = []
    m = 1
    conv = None
    while True:
        need = 2 * N * (m - 1)
        if conv is None or len(conv) <= need:
            try:
                conv = cf_expand(alpha, need + 2 * N, eps)
            except UncertainComparison:
                break
            if len(conv) <= need:
                break
        try:
            t = twisted_step(alpha, v, N, m, eps, conv)
        except (UncertainComparison, DomainError):
            break
        if t.k > n_max:
            break
        ups = float(upsilon(t, alpha))
        psi = psi_sequence(phi, m, gamma)
        bound = float((t.k_prime + v.a) / t.det()) * float(phi_eval(phi, t.k)) if t.k >= 0 else 0.0
        out.append(TwistedFlag(m, t.k, ups, psi, bound, t.k >= 1 and ups < psi and ups < bound,
                               ups < psi))
        m += 1
    return out


def twisted_khinchin_scan(alpha, v: Vec2, phi: PhiSpec, n_max: int, method: str = "both",
                          N: int = 3, gamma: float = 1.1, eps: float = None) -> TwistedScan:
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if method not in ("direct", "twisted", "both"):
        raise ValueError(f"unknown method {method!r}")
    direct = direct_solutions(alpha, v, phi, n_max) if method != "twisted" else None
    flags = twisted_flags(alpha, v, phi, n_max, N, gamma, eps) if method != "direct" else None
    scan = TwistedScan(direct, flags)
    if method == "both":
        missing = set(scan.twisted) - set(direct)
        if missing:
            raise StructureError("twisted solutions missing from the direct scan",
                                 missing=sorted(missing))
    return scan


def decade_counts(solutions: Sequence[int], decades: int) -> List[int]:
    """Counts of solutions in (10^k, 10^(k+1)] for k = 0..decades-1."""
    out = [0] * decades
    for n in solutions:
        if n <= 1:
            continue
        k = math.ceil(math.log10(n)) - 1
        if 0 <= k < decades:
            out[k] += 1
    return out


def random_dyadic(rng, bits: int) -> Fraction:
    """Uniform dyadic rational in (0, 1) with ``bits`` bits."""
    nbytes = (bits + 7) // 8
    k = int.from_bytes(rng.bytes(nbytes), "big") >> (8 * nbytes - bits)
    return Fraction(2 * k + 1, 2 ** (bits + 1)) if bits < 62 else Fraction(k or 1, 2 ** bits)


def theorem_e_sample(rng, params) -> dict:
    """Decade counts of solutions for random dyadic alpha, x, y."""
    alpha = random_dyadic(rng, params.get("alpha_bits", 40))
    x = random_dyadic(rng, params.get("x_bits", 20))
    y = random_dyadic(rng, params.get("y_bits", 60))
    n_max = params["nmax"]
    decades = int(round(math.log10(n_max)))
    vals = frac_values(alpha, x, y, n_max)
    n = np.arange(1, n_max + 1, dtype=float)
    out = {"alpha": str(alpha), "x": str(x), "y": str(y)}
    for name in ("phi_convergent", "phi_divergent", "phi"):
        if name not in params:
            continue
        phi = PhiSpec(*[Fraction(t) for t in params[name]])
        ph = phi_array(phi, n)
        sols = np.nonzero(vals < ph)[0] + 1
        out[name] = decade_counts([int(k) for k in sols], decades)
    return out


def quadratic(a: int, D: int, b: int, prec: int = 256):
    """(a + sqrt D) / b in a private context of ``prec`` bits.

    The value keeps its context, so later arithmetic on it stays at that
    precision whatever the global mpmath setting is.
    """
    ctx = mpmath.MPContext()
    ctx.prec = prec
    return (a + ctx.sqrt(D)) / b


def random_quadratic(rng, prec: int = 256):
    """(a + sqrt(D)) / b with D not a square, evaluated with ``prec`` bits."""
    while True:
        D = int(rng.integers(2, 200))
        if math.isqrt(D) ** 2 != D:
            break
    a = int(rng.integers(0, 10))
    b = int(rng.integers(1, 10))
    return quadratic(a, D, b, prec)


def twisted_sample(rng, params) -> dict:
    """Direct and twisted scans of one random dyadic (alpha, x, y)."""
    alpha = random_dyadic(rng, params.get("alpha_bits", 40))
    x = random_dyadic(rng, params.get("x_bits", 20))
    y = random_dyadic(rng, params.get("y_bits", 60))
    phi = PhiSpec(*[Fraction(t) for t in params["phi"]])
    n_max = params["nmax"]
    scan = twisted_khinchin_scan(alpha, Vec2(x, y), phi, n_max, "both",
                                 params.get("N", 3), params.get("gamma", 1.1))
    decades = max(1, int(round(math.log10(n_max))))
    return {"alpha": str(alpha), "x": str(x), "y": str(y),
            "solutions": len(scan.direct), "decades": decade_counts(scan.direct, decades),
            "twisted": scan.twisted, "steps": len(scan.flags)}
