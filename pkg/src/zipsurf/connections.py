"""Saddle connections from reduced triples, a geometric tracer, enumeration
and systoles.

A triple (q, p, n) follows the orbit x_m = T^m u^b_q.  With
D = u^t_p - x_n the intervals J_m = x_m + (0, D) (oriented by the sign of D)
are the forward copies of the backward images of I(q, p, n); the triple is
reduced when no J_m has a singularity in its interior and every J_m stays in
[0, lambda_*].  Keeping running minima of the distance from x_m to the nearest
singularity on each side turns this into an O(1) test per (n, p).
"""

from __future__ import annotations

import csv
import io
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

from .core import (
    UNCERTAIN,
    ArtifactError,
    BudgetExceeded,
    DomainError,
    SingularityError,
    StructureError,
    Vec2,
    format_scalar,
)
from .iet import Iet
from .suspension import Surface, build_surface, singular_classes


class TraceError(ArtifactError):
    code = "trace"

    def __init__(self, message: str, code: str, **info):
        super().__init__(message, **info)
        self.code = code


class ConnectionError_(StructureError):
    """The IET has a connection where a displacement vanishes."""

    code = "vertical-connection"


@dataclass(frozen=True)
class SaddleConnection:
    q: int
    p: int
    n: Optional[int]
    holonomy: Vec2
    length: float
    bundle: Tuple[int, int]
    orientation: str  # up | down | horizontal

    @property
    def re(self):
        return self.holonomy.a

    @property
    def im(self):
        return self.holonomy.b


def _singular_points(T: Iet) -> list:
    pts = {T.ut[i] for i in range(2, T.d + 1)} | {T.ub[j] for j in range(2, T.d + 1)}
    pts |= {T.backend.zero(), T.total}
    return sorted(pts)


def _gaps(T: Iet, sing: list, x):
    """Distance from x to the nearest singular point strictly right and left."""
    i = bisect_right(sing, x)
    right = sing[i] - x if i < len(sing) else None
    j = bisect_left(sing, x) - 1
    left = x - sing[j] if j >= 0 else None
    return right, left


def displacement(T: Iet, q: int, p: int, n: int):
    """T^n u^b_q - u^t_p."""
    _check_indices(T, q, p)
    x = T.orbit(T.ub[q], n)[-1]
    return x - T.ut[p]


def _check_indices(T: Iet, q: int, p: int):
    if not (2 <= q <= T.d and 2 <= p <= T.d):
        raise DomainError(f"indices must lie in 2..{T.d}: q={q}, p={p}")


def _reduced_test(b, D, near, prev_room):
    """Reduced test for one candidate.

    ``near`` is (right, left) nearest singular point of the current orbit
    point and ``prev_room`` the (right, left) minimal gaps over earlier
    points.  The current point passes when u^t_p itself is its neighbour, a
    value comparison that is exact on both backends.
    """
    s = b.sign(D)
    if s is UNCERTAIN:
        return UNCERTAIN
    if s == 0:
        raise ConnectionError_("zero displacement: a connection, not a candidate")
    side = 0 if s > 0 else 1
    if near[side] != near[2]:
        return False
    room = prev_room[side]
    if room is None:
        return True
    c = b.sign(room - abs(D))
    if c is UNCERTAIN:
        return UNCERTAIN
    return c >= 0


@dataclass
class OrbitRecord:
    n: int
    p: int
    D: object  # u^t_p - T^n u^b_q
    theta_sum: Optional[Vec2]
    reduced: object  # True, False or UNCERTAIN


def scan_triples(T: Iet, q: int, n_max: int, theta: Sequence = None,
                 keep: Callable = None) -> Iterator[OrbitRecord]:
    """Walk the orbit of u^b_q and report every (n, p) up to n_max.

    ``keep(n, D)`` may discard candidates before the reduced test.  When
    ``theta`` (1-based translation data) is given, the Birkhoff sum
    S_n theta(u^b_q) is carried along.  On the float backend a step that lands
    within eps of a singularity ends the orbit with an UNCERTAIN record.
    """
    b = T.backend
    sing = _singular_points(T)
    x = T.ub[q]
    rmin = lmin = None
    acc = None
    if theta is not None:
        acc = theta[1] * 0
    for n in range(n_max + 1):
        r, l = _gaps(T, sing, x)
        if r is None or l is None:
            raise StructureError("orbit left the interval")
        right, left = sing[bisect_right(sing, x)], sing[bisect_left(sing, x) - 1]
        for p in range(2, T.d + 1):
            D = T.ut[p] - x
            if keep is not None and not keep(n, D):
                continue
            near = (right, left, T.ut[p])
            yield OrbitRecord(n, p, D, acc, _reduced_test(b, D, near, (rmin, lmin)))
        rmin = r if rmin is None or r < rmin else rmin
        lmin = l if lmin is None or l < lmin else lmin
        if n == n_max:
            return
        try:
            i, x = T.step(x)
        except SingularityError as exc:
            if exc.info.get("uncertain"):
                yield OrbitRecord(n + 1, exc.info.get("index"), None, acc, UNCERTAIN)
                return
            raise ConnectionError_(
                f"orbit of u^b_{q} hits u^t_{exc.info.get('index')} at step {n + 1}",
                q=q, p=exc.info.get("index"), n=n + 1)
        if acc is not None:
            acc = acc + theta[i]


def is_reduced(T: Iet, triple: Tuple[int, int, int]):
    q, p, n = triple
    _check_indices(T, q, p)
    for rec in scan_triples(T, q, n):
        if rec.n == n and rec.p == p:
            return rec.reduced
    raise StructureError("orbit ended early")


def gap_threshold(T: Iet):
    """Half the smallest gap between distinct points of {0, lambda_*, u^t, u^b}."""
    sing = _singular_points(T)
    return min(b - a for a, b in zip(sing, sing[1:])) / 2


def reduce_triple(T: Iet, triple: Tuple[int, int, int]) -> set:
    """Split a small-displacement triple into reduced triples.

    Let m be the largest index whose J_m has a singularity inside; it is a
    bottom point u^b_l with m >= 1.  The piece of the orbit from u^b_l gives
    the reduced triple (l, p, N - m).  Pulling J_m back once puts x_{m-1} next
    to a top point u^t_{p'}; (q, p', m - 1) is reduced again recursively.  A
    branch whose p' would be the left or right end of the interval is dropped.
    """
    b = T.backend
    q, p, N = triple
    _check_indices(T, q, p)
    pts = T.orbit(T.ub[q], N)
    D = T.ut[p] - pts[-1]
    eps_t = gap_threshold(T)
    c = b.sign(eps_t - abs(D))
    if c is UNCERTAIN or c <= 0:
        raise DomainError("displacement is not below the gap threshold",
                          displacement=D, threshold=eps_t)
    if b.sign(D) == 0:
        raise ConnectionError_("zero displacement")
    red = is_reduced(T, triple)
    if red is UNCERTAIN:
        raise DomainError("reduced test is uncertain at this precision")
    if red:
        return {triple}
    bottoms = [T.ub[j] for j in range(2, T.d + 1)]
    for m in range(N, -1, -1):
        lo, hi = sorted((pts[m], pts[m] + D))
        inside = [j for j, u in enumerate(bottoms, 2) if lo < u < hi]
        if inside:
            break
    else:
        raise StructureError("no dirty copy found for a non-reduced triple")
    if m == 0 or len(inside) != 1:
        raise StructureError("dirty copy does not match the gap argument", m=m)
    l = inside[0]
    out = {(l, p, N - m)}
    if D > 0:
        pp = T.perm.inv(l - 1) + 1
    else:
        pp = T.perm.inv(l)
    if 2 <= pp <= T.d:
        out |= reduce_triple(T, (q, pp, m - 1))
    return out


def birkhoff_theta(S: Surface, q: int, n: int) -> Vec2:
    from .iet import birkhoff_sum

    z = S.backend.zero()
    if n == 0:
        return Vec2(z, z)
    return birkhoff_sum(S.iet, S.theta, S.iet.ub[q], n, zero=Vec2(z, z))


def _formula_holonomy(S: Surface, triple) -> Vec2:
    q, p, n = triple
    return S.xt[p] - S.xb[q] - birkhoff_theta(S, q, n)


def holonomy_combinatorial(S: Surface, triple) -> Vec2:
    red = is_reduced(S.iet, triple)
    if red is UNCERTAIN:
        raise DomainError("reduced test is uncertain at this precision")
    if not red:
        raise StructureError(f"triple {triple} is not reduced", code="not-reduced")
    return _formula_holonomy(S, triple)


# ---------------------------------------------------------------------------
# geometric tracer (exact arithmetic)

class _Tracer:
    def __init__(self, S: Surface):
        if not S.backend.exact:
            raise StructureError("the tracer needs exact arithmetic")
        self.S = S
        self.sing = set()
        self.class_of = {}
        for idx, c in enumerate(singular_classes(S)):
            for st in c:
                self.sing.add(st)
                self.class_of[st] = idx
        # singular points on a shared edge are found from either rectangle
        self.sing_at = {}
        for st in sorted(self.sing, key=lambda s: (s[0], s[1], s[2].a, s[2].b)):
            self.sing_at.setdefault((st[0], st[2]), st)

    def singular(self, frame, r, P):
        st = (frame, r, P)
        if st in self.sing:
            return st
        return self.sing_at.get((frame, P))

    def rect(self, frame, r):
        S = self.S
        return S.top_rect(r) if frame == "t" else S.bottom_rect(r)

    def locate_on_line(self, x, vx):
        """Top rectangle entered when crossing y = 0 upward at x."""
        S = self.S
        ut = S.iet.ut
        for k in range(1, S.d + 1):
            right = ut[k + 1] if k < S.d else S.lam_star
            if ut[k] < x < right or (x == ut[k] and vx > 0) or (x == right and vx < 0):
                return k
        raise TraceError(f"no top rectangle at {x}", code="lost")

    def cross_side(self, frame, r, P, vx):
        """State after leaving rectangle r through a vertical side at P."""
        S = self.S
        pi, d = S.perm, S.d
        ut, ub = S.iet.ut, S.iet.ub
        y = P.b
        ts = S.tau_star
        for _ in range(4):
            if frame == "t":
                if vx > 0:
                    if r == d and ts > 0 and 0 <= y < ts:
                        k = pi.inv(d)
                        return "t", k + 1, Vec2(ut[k + 1], y + S.heights[k])
                    if r < d and y < min(S.xt[r + 1].b, S.heights[r + 1]):
                        return "t", r + 1, P
                else:
                    k = pi.inv(d)
                    if ts > 0 and r == k + 1 and S.heights[k] < y <= S.heights[k] + ts:
                        return "t", d, Vec2(S.lam_star, y - S.heights[k])
                    if r > 1 and y < min(S.xt[r].b, S.heights[r - 1]):
                        return "t", r - 1, P
                P = P + S.theta[r]
                frame, r, y = "b", pi(r), P.b
            else:
                if vx > 0:
                    if r == d and ts < 0 and ts < y <= 0:
                        j = pi(d) + 1
                        return "b", j, Vec2(ub[j], y - S.heights[d])
                    if r < d and y > max(S.xb[r + 1].b, -S.heights[pi.inv(r + 1)]):
                        return "b", r + 1, P
                else:
                    j = pi(d) + 1
                    if ts < 0 and r == j and ts - S.heights[d] <= y < -S.heights[d]:
                        return "b", d, Vec2(S.lam_star, y + S.heights[d])
                    if r > 1 and y > max(S.xb[r].b, -S.heights[pi.inv(r - 1)]):
                        return "b", r - 1, P
                i = pi.inv(r)
                P = P - S.theta[i]
                frame, r, y = "t", i, P.b
        raise TraceError("side crossing did not resolve", code="lost")

    def run(self, frame, r, P, v: Vec2, s_cap, max_steps: int):
        """Follow P + s v from state (frame, r, P) to the first singular point.

        Returns (s_hit, hit_state, crossings) where crossings lists the top
        rectangles entered through the line y = 0.
        """
        S = self.S
        s_total = Fraction(0)
        crossings = []
        for _ in range(max_steps):
            (x0, x1), (y0, y1) = self.rect(frame, r)
            cands = []
            if v.b > 0:
                cands.append(((y1 - P.b) / v.b, "top"))
            if v.a > 0:
                cands.append(((x1 - P.a) / v.a, "side"))
            elif v.a < 0:
                cands.append(((x0 - P.a) / v.a, "side"))
            s_exit, how = min(cands, key=lambda c: (c[0], c[1] != "top"))
            if s_exit < 0:
                raise TraceError("point outside its rectangle", code="lost")
            P = P + v * s_exit
            s_total += s_exit
            hit = self.singular(frame, r, P)
            if hit:
                return s_total, hit, crossings
            if s_total > s_cap:
                return None, None, crossings
            if how == "top":
                if frame == "t":
                    P = P + S.theta[r]
                    frame, r = "b", S.perm(r)
                k = self.locate_on_line(P.a, v.a)
                frame, r = "t", k
                crossings.append(k)
                hit = self.singular("t", r, P)
                if hit:
                    return s_total, hit, crossings
            else:
                frame, r, P = self.cross_side(frame, r, P, v.a)
                hit = self.singular(frame, r, P)
                if hit:
                    return s_total, hit, crossings
        raise TraceError("step budget exhausted", code="lost")


@dataclass(frozen=True)
class Trace:
    holonomy: Vec2
    rectangles: Tuple[int, ...]
    hit: Tuple


def trace_geodesic(S: Surface, triple, tracer: _Tracer = None) -> Trace:
    """Follow the straight segment from the bottom point q in the direction
    predicted for (q, p, n) and certify that it first meets a singular point
    exactly at the top point p.
    """
    q, p, n = triple
    if not S.backend.exact:
        raise StructureError("tracing needs the rational backend")
    v = _formula_holonomy(S, triple)
    if v.b <= 0 or v.a == 0:
        raise TraceError("direction is not transverse", code="direction")
    tracer = tracer or _Tracer(S)
    start = ("b", q if v.a > 0 else q - 1, S.xb[q])
    s_hit, hit, crossings = tracer.run(*start, v, s_cap=Fraction(3, 2),
                                       max_steps=8 * (n + 2) * S.d + 50)
    if s_hit is None:
        raise TraceError("segment passes the target without a singular hit", code="miss")
    if s_hit < 1:
        raise TraceError(f"singular point hit early at parameter {s_hit}",
                         code="early-singularity", s=s_hit)
    if s_hit > 1:
        raise TraceError("segment passes the target without a singular hit", code="miss")
    target = ("t", p, S.xt[p])
    # the end may be reached through the corner gluing at xi_*, which is
    # another representative of the same point
    if tracer.class_of.get(hit) != tracer.class_of.get(target) or hit[0] != "t":
        raise TraceError(f"segment ends at {hit}, expected the top point {p}",
                         code="wrong-endpoint")
    return Trace(v * s_hit, tuple(crossings), hit)


def horizontal_rays(S: Surface, tracer: _Tracer = None):
    """Rightward horizontal rays leaving singular points, as t-frame states."""
    tracer = tracer or _Tracer(S)
    rays = []
    for st in sorted(tracer.sing, key=lambda s: (s[0], s[1], s[2].a, s[2].b)):
        frame, r, P = st
        if frame != "t":
            continue
        (x0, x1), (y0, y1) = S.top_rect(r)
        if not (y0 <= P.b < y1) or P.a >= x1:
            continue
        if P.a == x0 or P.b == y0:
            rays.append(st)
    return rays


def horizontal_connections(S: Surface, L_max) -> List[SaddleConnection]:
    """Horizontal saddle connections of length <= L_max, in both orientations."""
    if not S.backend.exact:
        raise StructureError("horizontal tracing needs the rational backend")
    tracer = _Tracer(S)
    out = []
    rays = horizontal_rays(S, tracer)
    one = Fraction(1)
    for st in rays:
        steps = 4 * S.d * (int(Fraction(L_max) / min(S.lengths[1:])) + 2)
        s_hit, hit, _ = tracer.run(*st, Vec2(one, Fraction(0)), s_cap=Fraction(L_max),
                                   max_steps=steps)
        if s_hit is None or s_hit == 0:
            continue
        i = tracer.class_of[st] + 1
        end = tracer.class_of[hit] + 1
        hol = Vec2(s_hit, Fraction(0))
        out.append(SaddleConnection(i, end, None, hol, float(s_hit), None, "horizontal"))
        out.append(SaddleConnection(end, i, None, -hol, float(s_hit), None, "horizontal"))
    return out


def _side_pieces(S: Surface, tracer: _Tracer, r: int):
    """Split the right side of top rectangle r by where its points are glued.

    Returns (pieces, singular_heights): each piece is (y0, y1, r2, shift)
    meaning local heights (y0, y1) continue into rectangle r2 at y + shift.
    """
    x1 = S.iet.ut[r] + S.lengths[r]
    h = S.heights[r]
    cands = {S.xt[r + 1].b if r < S.d else S.tau_star, S.tau_star,
             S.heights[S.perm.inv(S.d)] + S.tau_star}
    cuts = sorted(c for c in cands if 0 < c < h)
    sing = [c for c in cuts if ("t", r, Vec2(x1, c)) in tracer.sing]
    edges = [S.backend.zero()] + cuts + [h]
    pieces = []
    for y0, y1 in zip(edges, edges[1:]):
        mid = (y0 + y1) / 2
        frame, r2, P = tracer.cross_side("t", r, Vec2(x1, mid), 1)
        if frame == "b":
            r2 = S.perm.inv(r2)
            P = P - S.theta[r2]
        pieces.append((y0, y1, r2, P.b - mid))
    merged = []
    for pc in pieces:
        if merged and merged[-1][2:] == pc[2:] and merged[-1][1] not in sing:
            merged[-1] = (merged[-1][0], pc[1]) + pc[2:]
        else:
            merged.append(pc)
    return merged, sing


def _top_pieces(S: Surface, r: int):
    """(a, b, k): local x-range of the top edge of r continuing into rect k."""
    ut = S.iet.ut
    delta = S.theta[r].a
    x0 = ut[r]
    lo, hi = x0 + delta, x0 + S.lengths[r] + delta
    edges = [lo] + [ut[k] for k in range(2, S.d + 1) if lo < ut[k] < hi] + [hi]
    out = []
    for e0, e1 in zip(edges, edges[1:]):
        k = S.iet.top_index((e0 + e1) / 2)
        out.append((e0 - delta, e1 - delta, k))
    return out


def _bottom_pieces(S: Surface, r: int):
    """(a, b, k): local x-range of the bottom edge of r continuing into rect k."""
    ub = S.iet.ub
    x0 = S.iet.ut[r]
    x1 = x0 + S.lengths[r]
    edges = [x0] + [ub[j] for j in range(2, S.d + 1) if x0 < ub[j] < x1] + [x1]
    out = []
    for e0, e1 in zip(edges, edges[1:]):
        j = S.iet.bottom_position((e0 + e1) / 2)
        out.append((e0, e1, S.perm.inv(j)))
    return out


@dataclass(frozen=True)
class _Found:
    holonomy: Vec2
    start: int  # singular class indices, 0-based
    end: int


def _cap(iv, lo, loc, hi, hic):
    """Intersect a slope interval with another; None if empty.

    Slopes are pairs (num, den) with den >= 0; (1, 0) and (-1, 0) are the
    infinite ends, which are always open.  An interval is
    (lo, lo_closed, hi, hi_closed).
    """
    alo, aloc, ahi, ahic = iv
    c = lo[0] * alo[1] - alo[0] * lo[1]
    if c > 0:
        alo, aloc = lo, loc
    elif c == 0:
        aloc = aloc and loc
    c = hi[0] * ahi[1] - ahi[0] * hi[1]
    if c < 0:
        ahi, ahic = hi, hic
    elif c == 0:
        ahic = ahic and hic
    c = alo[0] * ahi[1] - ahi[0] * alo[1]
    if c > 0 or (c == 0 and not (aloc and ahic)):
        return None
    return alo, aloc, ahi, ahic


def _inside(iv, n, m):
    """Whether the slope n/m (m > 0) lies in the interval."""
    lo, loc, hi, hic = iv
    c = n * lo[1] - lo[0] * m
    if c < 0 or (c == 0 and not loc):
        return False
    c = n * hi[1] - hi[0] * m
    return c < 0 or (c == 0 and hic)


_POS_INF, _NEG_INF = (1, 0), (-1, 0)


def _outside_strip(iv, rho2, D, strip) -> bool:
    lo, _, hi, _ = iv
    if lo[1] == 0 or hi[1] == 0:
        return False
    smax = max(abs(lo[0] / lo[1]), abs(hi[0] / hi[1]))
    rho = math.sqrt(rho2) / D
    # smallest |Re| of a ray in the interval at distance rho
    x = rho / math.sqrt(1.0 + smax * smax)
    return x > float(strip(rho)) * (1 + 1e-9) + 1e-12


def _scaled_integer(S: Surface):
    """Copy of S scaled by the common denominator D of its data, and D."""
    D = 1
    for x in S.lengths[1:] + S.tau[1:]:
        D = math.lcm(D, Fraction(x).denominator)
    if D == 1:
        return S, 1
    return build_surface(S.perm, [x * D for x in S.lengths[1:]],
                         [x * D for x in S.tau[1:]], S.backend), D


def unfolding_search(S: Surface, L_max, strip: Callable = None) -> List[_Found]:
    """All non-horizontal saddle connections with Re > 0 and length <= L_max.

    Each singular point's rightward rays are followed through the rectangles
    they cross, unfolded into the plane with the start point at the origin.
    A node keeps the interval of slopes dy/dx of rays still inside the current
    rectangle.  A ray through a gluing cut goes to the piece it enters: on a
    top edge the piece to the right of a cut, on a bottom edge likewise, and
    a ray through an upper or lower right corner leaves through that edge.
    Horizontal rays are left to :func:`horizontal_connections`.
    The search runs in integers on a copy scaled to clear denominators.

    ``strip(r)``, a non-increasing bound, prunes nodes whose rays all have
    |Re| > strip(r) at distance r; connections outside the strip may still be
    returned.
    """
    if not S.backend.exact:
        raise StructureError("the unfolding search needs the rational backend")
    S, D = _scaled_integer(S)
    tracer = _Tracer(S)
    d = S.d
    ut = [None] + [int(x) for x in S.iet.ut[1:]]
    ub = [None] + [int(x) for x in S.iet.ub[1:]]
    lam = [None] + [int(x) for x in S.lengths[1:]]
    hts = [None] + [int(x) for x in S.heights[1:]]
    delta = [None] + [int(S.theta[r].a) for r in range(1, d + 1)]
    sides, tops, bottoms, corner_sing = {}, {}, {}, {}
    for r in range(1, d + 1):
        pieces, sing = _side_pieces(S, tracer, r)
        x1 = S.iet.ut[r] + S.lengths[r]
        sing_cls = [(int(y), tracer.class_of[("t", r, Vec2(x1, y))]) for y in sing]
        for y in (S.backend.zero(), S.heights[r]):
            st = ("t", r, Vec2(x1, y))
            if st in tracer.sing:
                sing_cls.append((int(y), tracer.class_of[st]))
        corner_sing[r] = sing_cls
        sides[r] = [(int(y0), int(y1), r2, int(sh)) for y0, y1, r2, sh in pieces]
        # a ray through the corner at the right end of the interval only has
        # a rectangle to continue into when that corner is singular
        tp = _top_pieces(S, r)
        tops[r] = [(int(a) - ut[r], int(b) - ut[r], k,
                    idx == len(tp) - 1 and S.perm(r) < d and b == x1)
                   for idx, (a, b, k) in enumerate(tp)]
        bp = _bottom_pieces(S, r)
        bottoms[r] = [(int(a) - ut[r], int(b) - ut[r], k,
                       idx == len(bp) - 1 and r < d and b == x1)
                      for idx, (a, b, k) in enumerate(bp)]
    L2 = math.floor(Fraction(L_max) ** 2 * D * D)
    found = set()
    starts = sorted((st for st in tracer.sing
                     if st[0] == "t" and st[2].a == S.iet.ut[st[1]]
                     and 0 <= st[2].b <= S.heights[st[1]]),
                    key=lambda s: (s[1], s[2].b))
    for st in starts:
        _, r0, P0 = st
        y0 = int(P0.b)
        sc = tracer.class_of[st]
        if y0 == 0:
            iv = ((0, 1), False, _POS_INF, False)
        elif y0 == hts[r0]:
            iv = (_NEG_INF, False, (0, 1), False)
        else:
            iv = (_NEG_INF, False, _POS_INF, False)
        stack = [(r0, 0, -y0, iv)]
        while stack:
            r, X, Y, iv = stack.pop()
            h = hts[r]
            Xr = X + lam[r]
            dx = X if X > 0 else 0
            dy = Y if Y > 0 else (Y + h if Y + h < 0 else 0)
            rho2 = dx * dx + dy * dy
            if rho2 > L2:
                continue
            if strip is not None and rho2 and _outside_strip(iv, rho2, D, strip):
                continue
            for yc, ec in corner_sing[r]:
                Yc = Y + yc
                if Yc != 0 and _inside(iv, Yc, Xr) and Xr * Xr + Yc * Yc <= L2:
                    found.add((Xr, Yc, sc, ec))
            for a, b, r2, shift in sides[r]:
                sub = _cap(iv, (Y + a, Xr), False, (Y + b, Xr), False)
                if sub is not None:
                    stack.append((r2, Xr, Y - shift, sub))
            top_y = Y + h
            if top_y > 0 and iv[2][0] > 0:
                for a, b, k, closed_b in tops[r]:
                    # x in [a, b) on the edge; slope decreases with x
                    xa, xb = X + a, X + b
                    if xb <= 0:
                        continue
                    if xa > 0:
                        sub = _cap(iv, (top_y, xb), closed_b, (top_y, xa), True)
                    else:
                        sub = _cap(iv, (top_y, xb), closed_b, _POS_INF, False)
                    if sub is not None and sub[2][0] > 0:
                        stack.append((k, X + ut[k] - delta[r] - ut[r], top_y, sub))
            if Y < 0 and iv[0][0] < 0:
                for a, b, k, closed_b in bottoms[r]:
                    # x in [a, b); slope increases with x
                    xa, xb = X + a, X + b
                    if xb <= 0:
                        continue
                    if xa > 0:
                        sub = _cap(iv, (Y, xa), True, (Y, xb), closed_b)
                    else:
                        sub = _cap(iv, _NEG_INF, False, (Y, xb), closed_b)
                    if sub is not None and sub[0][0] < 0:
                        stack.append((k, X + ub[S.perm(k)] - ut[r], Y - hts[k], sub))
    out = [_Found(Vec2(Fraction(a, D), Fraction(b, D)), sc, ec) for a, b, sc, ec in found]
    return sorted(out, key=lambda f: (f.holonomy.norm2(), f.holonomy.a, f.holonomy.b,
                                      f.start, f.end))


# ---------------------------------------------------------------------------
# enumeration

@dataclass
class EnumerationStats:
    triples: int = 0
    uncertain: int = 0
    triple_only: int = 0
    outside_chart: int = 0


def max_steps_for_length(S: Surface, L_max, q: int) -> int:
    c = min(S.xt[p].b for p in range(2, S.d + 1)) - S.xb[q].b
    if L_max < c:
        return -1
    return int(math.floor(float((L_max - c) / S.h_min)))


def iter_up_connections(S: Surface, L_max, keep: Callable = None,
                        stats: EnumerationStats = None, max_triples: int = None):
    """Up-oriented connections with |holonomy| <= L_max from reduced triples.

    ``keep(n, D)`` prunes on the displacement before the reduced test;
    uncertain float decisions are counted in ``stats`` and skipped.
    """
    T = S.iet
    stats = stats if stats is not None else EnumerationStats()
    L2 = L_max * L_max
    for q in range(2, S.d + 1):
        n_max = max_steps_for_length(S, L_max, q)
        if n_max < 0:
            continue
        for rec in scan_triples(T, q, n_max, S.theta, keep):
            stats.triples += 1
            if max_triples is not None and stats.triples > max_triples:
                raise BudgetExceeded(f"more than {max_triples} triples examined",
                                     triples=stats.triples)
            if rec.reduced is UNCERTAIN:
                stats.uncertain += 1
                if rec.D is None:
                    break
                continue
            if not rec.reduced:
                continue
            hol = S.xt[rec.p] - S.xb[q] - rec.theta_sum
            n2 = hol.norm2()
            if n2 <= L2:
                yield SaddleConnection(q, rec.p, rec.n, hol, math.sqrt(float(n2)),
                                       (q, rec.p), "up")


def enumerate_connections(S: Surface, L_max, max_triples: int = 10**7,
                          stats: EnumerationStats = None,
                          strip: Callable = None) -> List[SaddleConnection]:
    """All saddle connections of length <= L_max, sorted by length.

    Connections coming from reduced triples keep their chart labels (q, p, n)
    and bundle (q, p); the down-oriented reversal of an up connection gets
    bundle (p, q).  Connections outside that family (those that do not cross
    the base interval, or cross it too obliquely) carry ``n = None``,
    ``bundle = None`` and singular-class indices in ``q`` and ``p``.
    Float surfaces are enumerated on their exact rational image.

    With ``strip`` (a non-increasing function of length) only connections
    with |Re v| < strip(|v|), up to a relative slack of 1e-9, are returned;
    callers apply their own exact test.
    """
    stats = stats if stats is not None else EnumerationStats()
    E = S.to_rational()
    tracer = _Tracer(E)
    inside = (lambda v: True) if strip is None else (
        lambda v: abs(float(v.a)) < float(strip(v.norm())) * (1 + 1e-9) + 1e-12)
    keep = None
    if strip is not None:
        bound = float(strip(0))
        keep = lambda n, D: abs(float(D)) < bound * (1 + 1e-9) + 1e-12
    ups = [c for c in iter_up_connections(E, L_max, keep=keep, stats=stats,
                                          max_triples=max_triples)
           if inside(c.holonomy)]
    by_key = {}
    for c in ups:
        sc = tracer.class_of[("b", c.q, E.xb[c.q])]
        by_key[(c.holonomy, sc)] = c
    rev = {}
    for c in ups:
        ec = tracer.class_of[("t", c.p, E.xt[c.p])]
        rev[(-c.holonomy, ec)] = c
    out = []
    used = set()
    for f in unfolding_search(E, L_max, strip):
        if not inside(f.holonomy):
            continue
        for v, sc, ec in ((f.holonomy, f.start, f.end), (-f.holonomy, f.end, f.start)):
            c = by_key.get((v, sc))
            if c is not None:
                used.add(id(c))
                out.append(c)
                continue
            c = rev.get((v, sc))
            if c is not None:
                out.append(SaddleConnection(c.p, c.q, c.n, v, c.length, (c.p, c.q), "down"))
                continue
            stats.outside_chart += 1
            orient = "up" if v.b > 0 else "down"
            out.append(SaddleConnection(sc + 1, ec + 1, None, v, v.norm(), None, orient))
    for c in ups:
        if id(c) not in used:
            stats.triple_only += 1
            out.append(c)
            out.append(SaddleConnection(c.p, c.q, c.n, -c.holonomy, c.length, (c.p, c.q), "down"))
    if strip is None:
        out += horizontal_connections(E, L_max)
    else:
        h_max = min(Fraction(L_max), Fraction(float(strip(0))) * 2)
        out += [c for c in horizontal_connections(E, h_max) if inside(c.holonomy)]
    seen, uniq = set(), []
    for c in sorted(out, key=_sort_key):
        key = (c.holonomy, c.bundle, c.q, c.p)
        if key in seen:
            continue
        seen.add(key)
        uniq.append(c)
    if not S.backend.exact:
        b = S.backend
        uniq = [SaddleConnection(c.q, c.p, c.n, Vec2(b.scalar(c.holonomy.a), b.scalar(c.holonomy.b)),
                                 c.length, c.bundle, c.orientation) for c in uniq]
    return uniq


def _sort_key(c: SaddleConnection):
    return (c.length, float(c.holonomy.a), float(c.holonomy.b), c.bundle or (0, 0),
            c.q, c.p, c.orientation)


def _adaptive(S: Surface, pick: Callable, max_rounds: int = 12):
    L = 2 * math.sqrt(float(S.area))
    for _ in range(max_rounds):
        conns = [c for c in enumerate_connections(S, L) if pick(c)]
        if conns:
            return min(c.length for c in conns)
        L *= 2
    raise BudgetExceeded("no connection found within the length budget")


def systole(S: Surface) -> float:
    return _adaptive(S, lambda c: True)


def systole_bundle(S: Surface, q: int, p: int) -> float:
    return _adaptive(S, lambda c: c.orientation == "up" and c.bundle == (q, p))


CSV_COLUMNS = ["q", "p", "n", "re", "im", "length", "bundle", "orientation"]


def connections_csv(conns: Sequence[SaddleConnection], header: str = None) -> str:
    buf = io.StringIO()
    if header:
        buf.write(header.rstrip("\n") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in conns:
        w.writerow([c.q, c.p, "" if c.n is None else c.n, format_scalar(c.re),
                    format_scalar(c.im), repr(float(c.length)),
                    "" if c.bundle is None else f"{c.bundle[0]}-{c.bundle[1]}", c.orientation])
    return buf.getvalue()
