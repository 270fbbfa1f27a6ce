"""Scalar backends, planar vectors and matrices, and the (c, p, q) family of
decreasing functions used by the Khinchin-type conditions.

Two scalar backends share one interface.  The rational backend works with
:class:`fractions.Fraction` and is exact.  The float backend uses Python floats
(53 bits) or an mpmath context of higher precision; every sign decision it
makes goes through :meth:`Backend.sign`, which answers :data:`UNCERTAIN` when
the value lies within ``eps`` of zero.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, List, Sequence, Tuple, Union

import mpmath

Scalar = Union[Fraction, float, Any]


class ArtifactError(Exception):
    """Base class; ``code`` is a short machine-readable tag."""

    code = "error"

    def __init__(self, message: str = "", **info):
        super().__init__(message)
        self.info = info


class DomainError(ArtifactError):
    code = "domain"


class SingularityError(ArtifactError):
    code = "singularity"


class BackendCapabilityError(ArtifactError):
    code = "backend-capability"


class StructureError(ArtifactError):
    code = "structure"


class ValidationError(ArtifactError):
    code = "validation"

    def __init__(self, message: str = "", code: str = "validation", **info):
        super().__init__(message, **info)
        self.code = code


class UncertainComparison(ArtifactError):
    code = "uncertain"


class BudgetExceeded(ArtifactError):
    code = "budget"


class _Uncertain:
    """Outcome of a float comparison whose truth flips within eps."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNCERTAIN"

    def __bool__(self):
        raise UncertainComparison("comparison within tolerance used as a boolean")


UNCERTAIN = _Uncertain()


@lru_cache(maxsize=None)
def _mp_context(prec: int):
    ctx = mpmath.MPContext()
    ctx.prec = prec
    return ctx


def default_precision() -> int:
    return int(os.environ.get("ZIPSURF_PRECISION_BITS", "53"))


@dataclass(frozen=True)
class Backend:
    kind: str = "rational"
    prec: int = 53
    eps: float = 1e-9

    def __post_init__(self):
        if self.kind not in ("rational", "float"):
            raise ValueError(f"unknown backend {self.kind!r}")
        if self.kind == "float" and not self.eps > 0:
            raise ValueError("float backend needs eps > 0")

    @property
    def exact(self) -> bool:
        return self.kind == "rational"

    @property
    def mp(self):
        """The mpmath context for high-precision floats, or None for 53 bits."""
        if self.kind == "float" and self.prec > 53:
            return _mp_context(self.prec)
        return None

    def scalar(self, x) -> Scalar:
        if isinstance(x, str):
            return parse_scalar(x, self)
        if self.kind == "rational":
            if isinstance(x, float):
                return Fraction(x)
            return Fraction(x)
        ctx = self.mp
        if ctx is not None:
            if isinstance(x, Fraction):
                return ctx.mpf(x.numerator) / x.denominator
            return ctx.mpf(x)
        return float(x)

    def zero(self) -> Scalar:
        return self.scalar(0)

    def sign(self, x):
        """-1, 0, 1, or UNCERTAIN (float backend within eps of zero)."""
        if self.kind == "rational":
            return (x > 0) - (x < 0)
        if abs(x) <= self.eps:
            return UNCERTAIN
        return 1 if x > 0 else -1

    def cmp(self, a, b):
        return self.sign(a - b)

    def _need_float(self, what: str, arg):
        if self.kind == "rational" and arg != 0:
            raise BackendCapabilityError(
                f"{what} of a non-zero argument needs the float backend", arg=arg)

    def exp(self, x):
        self._need_float("exp", x)
        if self.kind == "rational":
            return Fraction(1)
        ctx = self.mp
        return ctx.exp(x) if ctx is not None else math.exp(x)

    def cos(self, x):
        self._need_float("cos", x)
        if self.kind == "rational":
            return Fraction(1)
        ctx = self.mp
        return ctx.cos(x) if ctx is not None else math.cos(x)

    def sin(self, x):
        self._need_float("sin", x)
        if self.kind == "rational":
            return Fraction(0)
        ctx = self.mp
        return ctx.sin(x) if ctx is not None else math.sin(x)

    def tan(self, x):
        self._need_float("tan", x)
        if self.kind == "rational":
            return Fraction(0)
        ctx = self.mp
        return ctx.tan(x) if ctx is not None else math.tan(x)


RATIONAL = Backend("rational")
FLOAT = Backend("float", prec=53, eps=1e-9)


def float_backend(prec: int = None, eps: float = 1e-9) -> Backend:
    return Backend("float", prec=prec or default_precision(), eps=eps)


def backend_of(*values) -> Backend:
    """Guess the backend from values: all Fractions/ints means rational."""
    for v in values:
        if isinstance(v, (list, tuple)):
            if backend_of(*v) is not RATIONAL:
                return FLOAT
        elif isinstance(v, Vec2):
            if backend_of(v.a, v.b) is not RATIONAL:
                return FLOAT
        elif not isinstance(v, (Fraction, int)):
            return FLOAT
    return RATIONAL


def parse_scalar(text: str, backend: Backend = RATIONAL) -> Scalar:
    """Parse ``3/2``, ``-0.25`` or ``7`` into a backend scalar."""
    s = text.strip()
    if not s:
        raise ValueError("empty scalar literal")
    if backend.kind == "rational":
        return Fraction(s)
    if "/" in s:
        return backend.scalar(Fraction(s))
    ctx = backend.mp
    return ctx.mpf(s) if ctx is not None else float(s)


def format_scalar(x: Scalar) -> str:
    if isinstance(x, Fraction):
        return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, int):
        return str(x)
    return mpmath.nstr(x, int(x.context.dps) if hasattr(x, "context") else 30)


def to_float(x: Scalar) -> float:
    return float(x)


def log_abs(x: Scalar) -> float:
    """log|x| that works for huge Fractions and mpf values."""
    if isinstance(x, Fraction):
        return math.log(abs(x.numerator)) - math.log(x.denominator)
    if isinstance(x, int):
        return math.log(abs(x))
    if isinstance(x, float):
        return math.log(abs(x))
    return float(mpmath.log(abs(x)))


@dataclass(frozen=True, slots=True)
class Vec2:
    a: Scalar
    b: Scalar

    def __add__(self, o: "Vec2") -> "Vec2":
        return Vec2(self.a + o.a, self.b + o.b)

    def __sub__(self, o: "Vec2") -> "Vec2":
        return Vec2(self.a - o.a, self.b - o.b)

    def __neg__(self) -> "Vec2":
        return Vec2(-self.a, -self.b)

    def __mul__(self, k) -> "Vec2":
        return Vec2(self.a * k, self.b * k)

    __rmul__ = __mul__

    def __iter__(self):
        yield self.a
        yield self.b

    def norm2(self) -> Scalar:
        return self.a * self.a + self.b * self.b

    def norm(self) -> float:
        return math.hypot(float(self.a), float(self.b))

    def slope(self) -> Scalar:
        return self.b / self.a


ZERO2 = Vec2(Fraction(0), Fraction(0))


@dataclass(frozen=True, slots=True)
class Mat2:
    """2x2 matrix stored by columns: ``Mat2(v, w)`` is ``[v, w]``."""

    v: Vec2
    w: Vec2

    def apply(self, u: Vec2) -> Vec2:
        return Vec2(self.v.a * u.a + self.w.a * u.b, self.v.b * u.a + self.w.b * u.b)

    def det(self) -> Scalar:
        return det2(self.v, self.w)

    def __matmul__(self, o: "Mat2") -> "Mat2":
        return Mat2(self.apply(o.v), self.apply(o.w))


def det2(v: Vec2, w: Vec2) -> Scalar:
    return v.a * w.b - v.b * w.a


def precedes(v: Vec2, w: Vec2, backend: Backend = None):
    """v before w in the determinant ordering; UNCERTAIN on float ties."""
    backend = backend or backend_of(v, w)
    s = backend.sign(det2(v, w))
    if s is UNCERTAIN:
        return UNCERTAIN
    return s > 0


def identity(backend: Backend = RATIONAL) -> Mat2:
    one, zero = backend.scalar(1), backend.scalar(0)
    return Mat2(Vec2(one, zero), Vec2(zero, one))


def flow_matrix(t: Scalar, backend: Backend = None) -> Mat2:
    backend = backend or backend_of(t)
    e = backend.exp(t)
    zero = backend.zero()
    return Mat2(Vec2(e, zero), Vec2(zero, 1 / e))


def rotation_matrix(theta: Scalar, backend: Backend = None) -> Mat2:
    backend = backend or backend_of(theta)
    c, s = backend.cos(theta), backend.sin(theta)
    return Mat2(Vec2(c, s), Vec2(-s, c))


@dataclass(frozen=True)
class PhiSpec:
    """phi(t) = c * (t+2)^-p * log(t+2)^-q."""

    c: Scalar
    p: Scalar
    q: Scalar = 0

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("phi needs c > 0", code="phi-c", c=self.c)
        if self.p < 0 or self.q < 0:
            raise ValidationError("phi needs p, q >= 0", code="phi-pq")
        if self.p < 1:
            raise ValidationError(
                "phi needs p >= 1 so that (t+2)*phi(t) is non-increasing",
                code="phi-not-decreasing", p=self.p)

    def __call__(self, t) -> float:
        return phi_eval(self, t)

    def text(self) -> str:
        return ",".join(format_scalar(x) for x in (self.c, self.p, self.q))

    def integral_diverges(self) -> bool:
        return self.p == 1 and self.q <= 1


def parse_phi(text: str) -> PhiSpec:
    """Parse ``c,p,q`` (optionally prefixed by ``phi=``)."""
    s = text.strip()
    if s.startswith("phi="):
        s = s[4:]
    parts = [x for x in s.split(",")]
    if len(parts) not in (2, 3):
        raise ValidationError(f"phi spec needs c,p[,q]: {text!r}", code="phi-syntax")
    try:
        vals = [Fraction(x.strip()) for x in parts]
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"bad phi literal in {text!r}: {exc}", code="phi-syntax")
    return PhiSpec(*vals)


def phi_eval(phi: PhiSpec, t: Scalar):
    """Exact when t is rational, p is an integer and q == 0; float otherwise."""
    u = t + 2
    if isinstance(u, (Fraction, int)) and phi.q == 0 and Fraction(phi.p).denominator == 1:
        return Fraction(phi.c) / Fraction(u) ** int(phi.p)
    u = float(u)
    val = float(phi.c) * u ** (-float(phi.p))
    if phi.q:
        val *= math.log(u) ** (-float(phi.q))
    return val


def phi_array(phi: PhiSpec, t):
    import numpy as np

    u = np.asarray(t, dtype=float) + 2.0
    val = float(phi.c) * u ** (-float(phi.p))
    if phi.q:
        val = val * np.log(u) ** (-float(phi.q))
    return val


@dataclass(frozen=True)
class SeriesProbe:
    partial_sums: List[float]
    last_decade_increment: float
    divergent: bool
    threshold: float = field(default=1e-2)


def series_probe(phi: PhiSpec, base: float, K: int, threshold: float = 1e-2) -> SeriesProbe:
    """Partial sums of base^k phi(base^k), k = 0..K-1.

    The classification looks at the increment contributed by the terms whose
    argument base^k lies in the last decade (base^(K-1)/10, base^(K-1)].
    """
    if K < 1:
        raise DomainError("series_probe needs K >= 1")
    if not base > 1:
        raise DomainError("series_probe needs base > 1")
    sums, acc = [], 0.0
    for k in range(K):
        x = float(base) ** k
        acc += x * phi_eval(phi, x)
        sums.append(acc)
    top = (K - 1) * math.log(base)
    first = next(k for k in range(K) if k * math.log(base) > top - math.log(10.0))
    inc = sums[-1] - (sums[first - 1] if first > 0 else 0.0)
    return SeriesProbe(sums, inc, inc > threshold, threshold)


def lowest_terms_ok(x: Fraction) -> bool:
    from math import gcd

    return x.denominator > 0 and gcd(x.numerator, x.denominator) == 1


def vec(a, b, backend: Backend = RATIONAL) -> Vec2:
    return Vec2(backend.scalar(a), backend.scalar(b))


def as_vectors(pairs: Sequence[Tuple], backend: Backend = RATIONAL) -> List[Vec2]:
    return [vec(a, b, backend) for a, b in pairs]
