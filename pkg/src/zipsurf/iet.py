"""Interval exchange transformations.

Indices are 1-based throughout the public interface: ``perm[i]`` for
``i = 1..d`` is stored in a tuple with a dummy slot 0.  Bottom data are indexed
by bottom position, so ``ub[j]`` is the left end of the j-th interval from the
left on the bottom line.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Optional, Sequence, Tuple

from .core import (
    RATIONAL,
    UNCERTAIN,
    Backend,
    DomainError,
    SingularityError,
    StructureError,
    ValidationError,
    backend_of,
)


class Permutation:
    """Combinatorial datum: ``images[i-1] = pi(i)``."""

    __slots__ = ("d", "_fwd", "_inv")

    def __init__(self, images: Sequence[int]):
        imgs = tuple(int(x) for x in images)
        d = len(imgs)
        if d < 2:
            raise ValidationError("a permutation needs d >= 2", code="perm-size")
        if sorted(imgs) != list(range(1, d + 1)):
            raise ValidationError(f"not a bijection of 1..{d}: {imgs}", code="perm-bijective")
        self.d = d
        self._fwd = (0,) + imgs
        inv = [0] * (d + 1)
        for i in range(1, d + 1):
            inv[imgs[i - 1]] = i
        self._inv = tuple(inv)

    def __call__(self, i: int) -> int:
        return self._fwd[i]

    def inv(self, j: int) -> int:
        return self._inv[j]

    @property
    def images(self) -> Tuple[int, ...]:
        return self._fwd[1:]

    def __eq__(self, other):
        return isinstance(other, Permutation) and self._fwd == other._fwd

    def __hash__(self):
        return hash(self._fwd)

    def __repr__(self):
        return f"Permutation({self.images})"

    def is_admissible(self) -> bool:
        """No proper initial block {1..k} is mapped to itself."""
        seen_max = 0
        for k in range(1, self.d):
            seen_max = max(seen_max, self._fwd[k])
            if seen_max == k:
                return False
        return True

    def rotation_shift(self) -> Optional[int]:
        """The constant c with pi(i) - i = c (mod d), if there is one."""
        c = (self._fwd[1] - 1) % self.d
        for i in range(2, self.d + 1):
            if (self._fwd[i] - i) % self.d != c:
                return None
        return c

    def is_rotational(self) -> bool:
        return self.rotation_shift() is not None


def rotational_structure(perm: Permutation) -> Optional[int]:
    """Shift class of a rotational datum, or None."""
    return perm.rotation_shift()


class Connection(NamedTuple):
    q: int
    p: int
    n: int
    uncertain: bool = False


@dataclass(frozen=True, eq=False)
class Iet:
    perm: Permutation
    lengths: Tuple
    backend: Backend = RATIONAL
    ut: Tuple = field(init=False, repr=False)
    ub: Tuple = field(init=False, repr=False)
    total: object = field(init=False, repr=False)
    shifts: Tuple = field(init=False, repr=False)

    def __post_init__(self):
        d, pi, lam = self.perm.d, self.perm, self.lengths
        ut = [None, self.backend.zero()]
        for i in range(1, d):
            ut.append(ut[-1] + lam[i])
        ub = [None, self.backend.zero()]
        for j in range(1, d):
            ub.append(ub[-1] + lam[pi.inv(j)])
        total = ut[d] + lam[d]
        shifts = [None] + [ub[pi(i)] - ut[i] for i in range(1, d + 1)]
        object.__setattr__(self, "ut", tuple(ut))
        object.__setattr__(self, "ub", tuple(ub))
        object.__setattr__(self, "total", total)
        object.__setattr__(self, "shifts", tuple(shifts))

    @property
    def d(self) -> int:
        return self.perm.d

    def length(self, i: int):
        return self.lengths[i]

    def top_index(self, x) -> int:
        """i with x in the half-open top interval [u^t_i, u^t_{i+1})."""
        return bisect_right(self.ut, x, 1, self.d + 1) - 1

    def bottom_position(self, x) -> int:
        return bisect_right(self.ub, x, 1, self.d + 1) - 1

    def _locate(self, x, sing, what: str) -> int:
        b = self.backend
        s0 = b.sign(x)
        s1 = b.sign(self.total - x)
        if s0 is UNCERTAIN or s1 is UNCERTAIN or s0 <= 0 or s1 <= 0:
            raise DomainError(f"{x!r} is not inside (0, {self.total!r})", x=x)
        i = bisect_right(sing, x, 1, self.d + 1) - 1
        for k in (i, i + 1):
            if 2 <= k <= self.d:
                s = b.sign(x - sing[k])
                if s is UNCERTAIN or s == 0:
                    raise SingularityError(
                        f"{x!r} is the {what} singularity {k}", index=k,
                        uncertain=s is UNCERTAIN)
        return i

    def apply(self, x, direction: str = "forward"):
        if direction == "forward":
            i = self._locate(x, self.ut, "top")
            return x + self.shifts[i]
        if direction == "inverse":
            j = self._locate(x, self.ub, "bottom")
            return x - self.shifts[self.perm.inv(j)]
        raise ValueError(f"direction must be forward or inverse, not {direction!r}")

    def step(self, x):
        """(index of the top interval containing x, T(x))."""
        i = self._locate(x, self.ut, "top")
        return i, x + self.shifts[i]

    def orbit(self, x, n: int):
        """x, Tx, ..., T^n x; raises SingularityError with ``step`` on a hit."""
        out = [x]
        for k in range(n):
            try:
                x = self.apply(x)
            except SingularityError as exc:
                exc.info["step"] = k
                raise
            out.append(x)
        return out

    def itinerary(self, x, n: int):
        """Top-interval indices of x, Tx, ..., T^(n-1) x and the point T^n x."""
        idx = []
        for k in range(n):
            try:
                i, x = self.step(x)
            except SingularityError as exc:
                exc.info["step"] = k
                raise
            idx.append(i)
        return idx, x

    def rotation_number(self):
        if not self.perm.is_rotational():
            raise StructureError("rotation number needs a rotational permutation")
        return self.ub[self.perm(1)] / self.total


def new_iet(perm, lengths: Sequence, backend: Backend = None) -> Iet:
    if not isinstance(perm, Permutation):
        perm = Permutation(perm)
    if len(lengths) != perm.d:
        raise ValidationError(
            f"need {perm.d} lengths, got {len(lengths)}", code="length-count")
    backend = backend or backend_of(*lengths)
    lam = tuple(backend.scalar(x) for x in lengths)
    for i, x in enumerate(lam, 1):
        if not x > 0:
            raise ValidationError(f"length {i} is not positive: {x!r}", code="length-positive", index=i)
    return Iet(perm, (None,) + lam, backend)


def apply(T: Iet, x, direction: str = "forward"):
    return T.apply(x, direction)


def detect_connection(T: Iet, n_max: int) -> Optional[Connection]:
    """Smallest (n, q, p) with T^n u^b_q = u^t_p, 1 < q, p <= d, n <= n_max."""
    if n_max < 0:
        raise DomainError("n_max must be >= 0")
    d, b = T.d, T.backend
    pts = {q: T.ub[q] for q in range(2, d + 1)}
    for n in range(n_max + 1):
        for q in range(2, d + 1):
            x = pts.get(q)
            if x is None:
                continue
            for p in range(2, d + 1):
                s = b.sign(x - T.ut[p])
                if s is UNCERTAIN:
                    return Connection(q, p, n, True)
                if s == 0:
                    return Connection(q, p, n)
        if n == n_max:
            break
        for q in list(pts):
            try:
                pts[q] = T.apply(pts[q])
            except SingularityError:
                del pts[q]
        if not pts:
            break
    return None


def birkhoff_sum(T: Iet, f: Sequence, x, n: int, zero=None):
    """f(x) + f(Tx) + ... + f(T^(n-1) x) for f constant on top intervals.

    ``f`` is indexed 1..d (pass a list with a dummy slot 0, or a length-d list).
    """
    vals = tuple(f) if len(f) == T.d + 1 else (None,) + tuple(f)
    if zero is None:
        sample = vals[1]
        zero = sample * 0 if not isinstance(sample, (int, Fraction)) else Fraction(0)
    acc = zero
    for k in range(n):
        try:
            i = T._locate(x, T.ut, "top")
        except SingularityError as exc:
            exc.info["step"] = k
            raise
        acc = acc + vals[i]
        if k + 1 < n:
            x = x + T.shifts[i]
    return acc


def rotation_number(T: Iet):
    return T.rotation_number()
