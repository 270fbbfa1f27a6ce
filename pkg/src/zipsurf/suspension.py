"""Zippered-rectangle surfaces built from (pi, lambda, tau).

Corner lists ``xt`` and ``xb`` carry d+1 entries (1-based); the last one is
the total vector.  Bottom corners are indexed by bottom position.  The surface
is the union of the top rectangles; each bottom rectangle is a translated copy
(by ``theta``) of a top one, and the walk in :func:`point_class` moves between
the two frames to follow the identifications around a point.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .core import (
    RATIONAL,
    UNCERTAIN,
    Backend,
    DomainError,
    StructureError,
    ValidationError,
    Vec2,
    backend_of,
    float_backend,
)
from .iet import Iet, Permutation


@dataclass(frozen=True)
class Validation:
    ok: bool
    side: Optional[str] = None  # "top" or "bottom"
    k: Optional[int] = None

    def __bool__(self):
        return self.ok


def canonical_suspension(perm) -> Tuple[Fraction, ...]:
    perm = perm if isinstance(perm, Permutation) else Permutation(perm)
    if not perm.is_admissible():
        raise ValidationError(f"{perm.images} is not admissible", code="perm-admissible")
    return tuple(Fraction(perm(i) - i) for i in range(1, perm.d + 1))


def validate_suspension(perm, tau: Sequence, backend: Backend = None) -> Validation:
    """First failing inequality among the 2(d-1) cone conditions, if any."""
    perm = perm if isinstance(perm, Permutation) else Permutation(perm)
    backend = backend or backend_of(*tau)
    d = perm.d
    t = (None,) + tuple(tau)
    top = backend.zero()
    for k in range(1, d):
        top = top + t[k]
        s = backend.sign(top)
        if s is UNCERTAIN or s <= 0:
            return Validation(False, "top", k)
    for k in range(1, d):
        bot = sum((t[perm.inv(j)] for j in range(1, k + 1)), backend.zero())
        s = backend.sign(bot)
        if s is UNCERTAIN or s >= 0:
            return Validation(False, "bottom", k)
    return Validation(True)


@dataclass(frozen=True, eq=False)
class Surface:
    perm: Permutation
    lengths: Tuple  # 1-based, slot 0 unused
    tau: Tuple  # 1-based
    backend: Backend = RATIONAL
    iet: Iet = field(init=False, repr=False)
    zeta: Tuple = field(init=False, repr=False)
    xt: Tuple = field(init=False, repr=False)
    xb: Tuple = field(init=False, repr=False)
    theta: Tuple = field(init=False, repr=False)
    heights: Tuple = field(init=False, repr=False)
    area: object = field(init=False, repr=False)

    def __post_init__(self):
        pi, d, z0 = self.perm, self.perm.d, self.backend.zero()
        zeta = (None,) + tuple(Vec2(self.lengths[i], self.tau[i]) for i in range(1, d + 1))
        xt = [None, Vec2(z0, z0)]
        for i in range(1, d + 1):
            xt.append(xt[-1] + zeta[i])
        xb = [None, Vec2(z0, z0)]
        for j in range(1, d + 1):
            xb.append(xb[-1] + zeta[pi.inv(j)])
        theta = (None,) + tuple(xb[pi(i)] - xt[i] for i in range(1, d + 1))
        heights = (None,) + tuple(-theta[i].b for i in range(1, d + 1))
        area = sum((self.lengths[i] * heights[i] for i in range(1, d + 1)), z0)
        set_ = object.__setattr__
        set_(self, "iet", Iet(pi, self.lengths, self.backend))
        set_(self, "zeta", zeta)
        set_(self, "xt", tuple(xt))
        set_(self, "xb", tuple(xb))
        set_(self, "theta", theta)
        set_(self, "heights", heights)
        set_(self, "area", area)

    @property
    def d(self) -> int:
        return self.perm.d

    @property
    def total(self) -> Vec2:
        return self.xt[self.d + 1]

    @property
    def tau_star(self):
        return self.total.b

    @property
    def lam_star(self):
        return self.total.a

    @property
    def h_min(self):
        return min(self.heights[1:])

    @property
    def h_max(self):
        return max(self.heights[1:])

    def lam(self) -> List:
        return list(self.lengths[1:])

    def taus(self) -> List:
        return list(self.tau[1:])

    def top_rect(self, i: int):
        """((x0, x1), (0, h_i)) for the top rectangle i."""
        x0 = self.iet.ut[i]
        return (x0, x0 + self.lengths[i]), (self.backend.zero(), self.heights[i])

    def bottom_rect(self, j: int):
        """((x0, x1), (-h, 0)) for the bottom rectangle at position j."""
        i = self.perm.inv(j)
        x0 = self.iet.ub[j]
        return (x0, x0 + self.lengths[i]), (-self.heights[i], self.backend.zero())

    def tau_star_flag(self) -> bool:
        """True when the sign of tau_* is not resolved by the backend."""
        s = self.backend.sign(self.tau_star)
        return s is UNCERTAIN or s == 0

    def to_rational(self) -> "Surface":
        if self.backend.exact:
            return self
        conv = lambda x: Fraction(float(x))
        return build_surface(self.perm, [conv(x) for x in self.lengths[1:]],
                             [conv(x) for x in self.tau[1:]], RATIONAL)


def build_surface(perm, lengths: Sequence, tau: Sequence = None, backend: Backend = None) -> Surface:
    perm = perm if isinstance(perm, Permutation) else Permutation(perm)
    if not perm.is_admissible():
        raise ValidationError(f"{perm.images} is not admissible", code="perm-admissible")
    if tau is None:
        tau = canonical_suspension(perm)
    if len(lengths) != perm.d:
        raise ValidationError(f"need {perm.d} lengths, got {len(lengths)}", code="length-count")
    if len(tau) != perm.d:
        raise ValidationError(f"need {perm.d} suspension values, got {len(tau)}", code="tau-count")
    backend = backend or backend_of(*lengths, *tau)
    lam = tuple(backend.scalar(x) for x in lengths)
    tt = tuple(backend.scalar(x) for x in tau)
    for i, x in enumerate(lam, 1):
        s = backend.sign(x)
        if s is UNCERTAIN or s <= 0:
            raise ValidationError(f"length {i} is not positive", code="length-positive", index=i)
    v = validate_suspension(perm, tt, backend)
    if not v:
        raise ValidationError(
            f"suspension data outside the cone: {v.side} inequality at k={v.k}",
            code=f"tau-{v.side}", k=v.k)
    return Surface(perm, (None,) + lam, (None,) + tt, backend)


# ---------------------------------------------------------------------------
# identifications around a point

State = Tuple[str, int, Vec2]


def _glued(S: Surface, state: State):
    """States identified with ``state`` by one elementary gluing."""
    frame, r, P = state
    pi, d = S.perm, S.d
    ut, ub = S.iet.ut, S.iet.ub
    lam_star, tau_star = S.lam_star, S.tau_star
    x, y = P.a, P.b
    if frame == "t":
        yield ("b", pi(r), P + S.theta[r])
        if r < d and x == ut[r + 1] and 0 <= y <= min(S.xt[r + 1].b, S.heights[r + 1]):
            yield ("t", r + 1, P)
        if r > 1 and x == ut[r] and 0 <= y <= min(S.xt[r].b, S.heights[r - 1]):
            yield ("t", r - 1, P)
        if y == 0:
            for j in range(1, d + 1):
                right = ub[j + 1] if j < d else lam_star
                if ub[j] <= x <= right:
                    yield ("b", j, P)
        if tau_star >= 0:
            k = pi.inv(d)
            hk = S.heights[k]
            if r == d and x == lam_star and 0 <= y <= tau_star:
                yield ("t", k + 1, Vec2(ut[k + 1], y + hk))
            if r == k + 1 and x == ut[k + 1] and hk <= y <= hk + tau_star:
                yield ("t", d, Vec2(lam_star, y - hk))
    else:
        i = pi.inv(r)
        yield ("t", i, P - S.theta[i])
        if r < d and x == ub[r + 1] and max(S.xb[r + 1].b, -S.heights[pi.inv(r + 1)]) <= y <= 0:
            yield ("b", r + 1, P)
        if r > 1 and x == ub[r] and max(S.xb[r].b, -S.heights[pi.inv(r - 1)]) <= y <= 0:
            yield ("b", r - 1, P)
        if y == 0:
            for k in range(1, d + 1):
                right = ut[k + 1] if k < d else lam_star
                if ut[k] <= x <= right:
                    yield ("t", k, P)
        if tau_star < 0:
            j = pi(d) + 1
            hd = S.heights[d]
            if r == d and x == lam_star and tau_star <= y <= 0:
                yield ("b", j, Vec2(ub[j], y - hd))
            if r == j and x == ub[j] and tau_star - hd <= y <= -hd:
                yield ("b", d, Vec2(lam_star, y + hd))


def point_class(S: Surface, start: State) -> FrozenSet[State]:
    """All (frame, rectangle, point) states identified with ``start``."""
    if not S.backend.exact:
        raise StructureError("the gluing walk needs exact arithmetic; use to_rational()")
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for nxt in _glued(S, s):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return frozenset(seen)


def is_singular_state(S: Surface, state: State) -> bool:
    frame, _, P = state
    corners = S.xt if frame == "t" else S.xb
    return any(P == corners[i] for i in range(1, S.d + 2))


def _quarter_turns(S: Surface, r: int, P: Vec2) -> int:
    (x0, x1), (y0, y1) = S.top_rect(r)
    on_x = P.a in (x0, x1)
    on_y = P.b in (y0, y1)
    if on_x and on_y:
        return 1
    if on_x or on_y:
        return 2
    return 4


def singular_classes(S: Surface) -> List[FrozenSet[State]]:
    S = S.to_rational()
    d = S.d
    seeds = [("t", 1, S.xt[1])]
    seeds += [("t", i, S.xt[i]) for i in range(2, d + 1)]
    seeds += [("b", j, S.xb[j]) for j in range(1, d + 1)]
    seeds.append(("t", d, S.total) if S.tau_star >= 0 else ("b", d, S.total))
    classes: List[FrozenSet[State]] = []
    covered = set()
    for s in seeds:
        if s in covered:
            continue
        c = point_class(S, s)
        covered |= c
        classes.append(c)
    return classes


def cone_angles(S: Surface) -> List[int]:
    """Total angle of each singular class in units of pi/2."""
    out = []
    for c in singular_classes(S):
        out.append(sum(_quarter_turns(S, r, P) for f, r, P in c if f == "t"))
    return out


def stratum_geometric(S: Surface) -> Tuple[int, ...]:
    orders = []
    for q in cone_angles(S):
        if q % 4:
            raise StructureError(f"cone angle {q}*pi/2 is not a multiple of 2*pi")
        orders.append(q // 4)
    if sum(orders) != S.d - 1:
        raise StructureError(f"orders {orders} do not sum to d-1")
    return tuple(sorted(orders, reverse=True))


def sector_map(perm) -> Dict[Tuple[str, int], Tuple[str, int]]:
    """Successor map on the labels ('D', i), i=2..d, and ('C', j), j=1..d-1.

    Images that fall off the label range pass through one of the two corner
    points (the total vector or the origin) and land on the label that the
    corner gluing leads to.
    """
    perm = perm if isinstance(perm, Permutation) else Permutation(perm)
    d = perm.d
    nxt = {}
    for i in range(2, d + 1):
        j = perm(i - 1)
        nxt[("D", i)] = ("C", j) if j < d else ("C", perm(d))
    for j in range(1, d):
        i = perm.inv(j + 1)
        nxt[("C", j)] = ("D", i) if i > 1 else ("D", perm.inv(1))
    return nxt


def stratum_combinatorial(perm) -> Tuple[int, ...]:
    perm = perm if isinstance(perm, Permutation) else Permutation(perm)
    if not perm.is_admissible():
        raise ValidationError(f"{perm.images} is not admissible", code="perm-admissible")
    nxt = sector_map(perm)
    seen, orders = set(), []
    for lab in nxt:
        if lab in seen:
            continue
        k, cur = 0, lab
        while cur not in seen:
            seen.add(cur)
            k += cur[0] == "C"
            cur = nxt[cur]
        orders.append(k)
    if sum(orders) != perm.d - 1:
        raise StructureError(f"orders {orders} do not sum to d-1")
    return tuple(sorted(orders, reverse=True))


def admissible_permutations(d: int):
    from itertools import permutations

    for imgs in permutations(range(1, d + 1)):
        p = Permutation(imgs)
        if p.is_admissible():
            yield p


# ---------------------------------------------------------------------------
# rotations

def rotate_surface(S: Surface, theta) -> Surface:
    if theta == 0:
        return S
    b = S.backend if not S.backend.exact else float_backend()
    th = b.scalar(theta)
    c, s = b.cos(th), b.sin(th)
    lam = [c * b.scalar(l) - s * b.scalar(t) for l, t in zip(S.lengths[1:], S.tau[1:])]
    tau = [s * b.scalar(l) + c * b.scalar(t) for l, t in zip(S.lengths[1:], S.tau[1:])]
    for i, x in enumerate(lam, 1):
        sg = b.sign(x)
        if sg is UNCERTAIN or sg <= 0:
            raise DomainError(f"rotation by {theta!r} makes length {i} non-positive",
                              code="lambda", index=i)
    v = validate_suspension(S.perm, tau, b)
    if not v:
        raise DomainError(f"rotation by {theta!r} leaves the cone: {v.side} k={v.k}",
                          code=f"tau-{v.side}", k=v.k)
    return Surface(S.perm, (None,) + tuple(lam), (None,) + tuple(tau), b)


def in_rotation_window(S: Surface, theta) -> bool:
    try:
        rotate_surface(S, theta)
    except DomainError:
        return False
    return True


def rotation_window(S: Surface, tol: float = 1e-12) -> Tuple[float, float]:
    """The open interval of angles around 0 kept by rotate_surface.

    Every condition is linear in tan(theta), so each bound is the arctangent
    of a ratio; the window is their intersection.
    """
    d, pi = S.d, S.perm
    lam = [float(x) for x in S.lengths[1:]]
    tau = [float(x) for x in S.tau[1:]]
    # condition a*cos + b*sin > 0, i.e. a + b*tan > 0 for |theta| < pi/2
    conds = [(lam[i], -tau[i]) for i in range(d)]
    for k in range(1, d):
        conds.append((sum(tau[:k]), sum(lam[:k])))
        idx = [pi.inv(j) - 1 for j in range(1, k + 1)]
        conds.append((-sum(tau[i] for i in idx), -sum(lam[i] for i in idx)))
    lo, hi = -math.pi / 2, math.pi / 2
    for a, b in conds:
        if b > 0:
            lo = max(lo, math.atan(-a / b))
        elif b < 0:
            hi = min(hi, math.atan(-a / b))
    return lo + tol, hi - tol


@dataclass(frozen=True)
class Reparam:
    s: float
    alpha: float
    v: Tuple
    top: Tuple  # (A, B) per top index p = 1..d
    bottom: Tuple  # (A, B) per bottom position q = 1..d

    def top_point(self, p: int) -> float:
        A, B = self.top[p - 1]
        return A + B * self.alpha

    def bottom_point(self, q: int) -> float:
        A, B = self.bottom[q - 1]
        return A + B * self.alpha


def rotation_reparam(S: Surface, theta) -> Reparam:
    """Normalized singularities of the rotated surface as affine functions of alpha.

    With v = (tau_*/lambda_*) lambda - tau and
    s = tan(theta) / (lambda_* - tau_* tan(theta)), the normalized top point p
    moves to u^t_p(0)/lambda_* + s * sum_{k<p} v_k, and alpha moves to
    alpha(0) + s * area / lambda_*.  Eliminating s gives coefficients
    A + B * alpha with B = (lambda_*/area) * sum v.
    """
    pi, d = S.perm, S.d
    if not pi.is_rotational():
        raise StructureError("rotation reparametrization needs a rotational permutation")
    if theta != 0 and not in_rotation_window(S, theta):
        raise DomainError(f"angle {theta!r} is outside the rotation window")
    lam = [float(x) for x in S.lengths[1:]]
    tau = [float(x) for x in S.tau[1:]]
    ls, ts, area = float(S.lam_star), float(S.tau_star), float(S.area)
    tn = math.tan(float(theta))
    s = tn / (ls - ts * tn)
    v = tuple(ts / ls * lam[i] - tau[i] for i in range(d))
    alpha0 = float(S.iet.rotation_number())
    alpha = alpha0 + s * area / ls
    scale = ls / area
    top, bottom = [], []
    for p in range(1, d + 1):
        B = scale * sum(v[:p - 1])
        top.append((float(S.iet.ut[p]) / ls - alpha0 * B, B))
    for q in range(1, d + 1):
        B = scale * sum(v[k - 1] for k in range(1, d + 1) if pi(k) < q)
        bottom.append((float(S.iet.ub[q]) / ls - alpha0 * B, B))
    return Reparam(s, alpha, v, tuple(top), tuple(bottom))
