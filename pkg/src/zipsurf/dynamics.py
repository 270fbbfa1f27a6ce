"""Diagonal flow on surfaces, systole trajectories and Khinchin-type scans.

Connections are enumerated once and their holonomies are evolved in closed
form under diag(e^t, e^-t).  Experiments draw one generator per sample from a
counter-based seed so results do not depend on how samples are scheduled.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import mpmath
import numpy as np

from .connections import EnumerationStats, SaddleConnection, enumerate_connections, scan_triples
from .core import (
    DomainError,
    PhiSpec,
    StructureError,
    Vec2,
    float_backend,
    phi_eval,
)
from .iet import Iet, Permutation
from .suspension import (
    Surface,
    admissible_permutations,
    build_surface,
    canonical_suspension,
    rotate_surface,
    rotation_window,
    validate_suspension,
)

# ---------------------------------------------------------------------------
# flow


def flow_surface(S: Surface, t) -> Surface:
    """The surface diag(e^t, e^-t) S: lengths times e^t, heights data times e^-t."""
    if t == 0:
        return S
    b = S.backend if not S.backend.exact else float_backend()
    et = b.exp(b.scalar(t))
    lam = [b.scalar(x) * et for x in S.lengths[1:]]
    tau = [b.scalar(x) / et for x in S.tau[1:]]
    return build_surface(S.perm, lam, tau, b)


@dataclass(frozen=True)
class FlowQuantities:
    re: float
    im: float
    length: float
    cot: float
    area_q: float
    min_instant: float
    min_len2: float
    short: bool  # length at t is below 1
    lower_bound_ok: bool  # short implies |t| > log of the length at 0


def flow_quantities(v: Vec2, t) -> FlowQuantities:
    a, b = float(v.a), float(v.b)
    if b == 0:
        raise DomainError("flow quantities need a non-horizontal vector", v=v)
    t = float(t)
    re, im = math.exp(t) * a, math.exp(-t) * b
    length = math.hypot(re, im)
    area_q = abs(a) * abs(b)
    min_instant = math.inf if a == 0 else 0.5 * math.log(abs(b / a))
    short = length < 1
    # len(t) >= e^-|t| len(0), so the bound holds for negative t with |t|
    ok = (not short) or abs(t) > math.log(math.hypot(a, b))
    return FlowQuantities(re, im, length, re / im, area_q, min_instant, 2 * area_q, short, ok)


def flowed_length(v: Vec2, t) -> float:
    return math.hypot(math.exp(t) * float(v.a), math.exp(-t) * float(v.b))


# ---------------------------------------------------------------------------
# systole trajectories


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    sys: float
    bundles: Dict[Tuple[int, int], float] = field(default_factory=dict)
    certified: bool = True


def systole_trajectory(S: Surface, t_grid: Sequence[float], L_budget=None,
                       max_rounds: int = 6) -> List[TrajectoryPoint]:
    """Systole and per-bundle systoles of the flowed surface at each t.

    A minimum at time t is certified when it is at most e^-|t| L: every
    connection longer than L at time 0 is longer than that at time t.  The
    length budget doubles until all times are certified or the rounds run out;
    uncertified points are reported with ``certified=False``.
    """
    ts = np.asarray(list(t_grid), dtype=float)
    L = float(L_budget) if L_budget is not None else 2 * math.sqrt(float(S.area))
    for _ in range(max_rounds):
        pts = _evolve(enumerate_connections(S, L), ts, L)
        if all(p.certified for p in pts) or L_budget is not None:
            return pts
        L *= 2
    return pts


def _evolve(conns: Sequence[SaddleConnection], ts: np.ndarray, L: float) -> List[TrajectoryPoint]:
    re = np.array([float(c.holonomy.a) for c in conns])
    im = np.array([float(c.holonomy.b) for c in conns])
    groups: Dict[Tuple[int, int], np.ndarray] = {}
    for key in sorted({c.bundle for c in conns if c.orientation == "up" and c.bundle}):
        groups[key] = np.array([i for i, c in enumerate(conns)
                                if c.orientation == "up" and c.bundle == key])
    out = []
    for t in ts:
        lens = np.hypot(math.exp(t) * re, math.exp(-t) * im) if len(re) else np.array([math.inf])
        m = float(lens.min())
        bound = math.exp(-abs(t)) * L
        bund = {k: float(lens[idx].min()) for k, idx in groups.items()}
        out.append(TrajectoryPoint(float(t), m, bund, m <= bound))
    return out


def torus_systole_trajectory(S: Surface, t_grid: Sequence[float], prec: int = 120) -> List[TrajectoryPoint]:
    """Systole of a flowed torus by Lagrange reduction of its period lattice.

    On a torus with one marked point the saddle connections are the primitive
    vectors of the lattice spanned by the two periods, so the systole is the
    first minimum of the flowed lattice.  The reduced basis of the previous
    time seeds the next reduction.  Lattice coordinates stay exact integers;
    only the flowed quadratic form is evaluated in floating point, with an
    unbounded exponent so times up to several thousand are fine.
    """
    if S.d != 2 or not S.backend.exact:
        raise StructureError("the lattice path needs a torus on the rational backend")
    z1, z2 = S.zeta[1], S.zeta[2]
    N = 1
    for x in (z1.a, z1.b, z2.a, z2.b):
        N = math.lcm(N, Fraction(x).denominator)
    u = [int(z1.a * N), int(z1.b * N)]
    w = [int(z2.a * N), int(z2.b * N)]
    ctx = mpmath.MPContext()
    ctx.prec = prec
    out = []
    for t in t_grid:
        E = ctx.exp(2 * ctx.mpf(t))
        Ei = 1 / E

        def n2(v):
            return E * v[0] * v[0] + Ei * v[1] * v[1]

        for _ in range(10000):
            nu, nw = n2(u), n2(w)
            if nw < nu:
                u, w, nu, nw = w, u, nw, nu
            mu = int(ctx.nint((E * u[0] * w[0] + Ei * u[1] * w[1]) / nu))
            if mu == 0:
                break
            w = [w[0] - mu * u[0], w[1] - mu * u[1]]
        else:
            raise StructureError("lattice reduction did not settle")
        sys_ = float(ctx.sqrt(n2(u)) / N)
        out.append(TrajectoryPoint(float(t), sys_, {}, True))
    return out


@dataclass(frozen=True)
class LogLawStatistic:
    times: List[float]
    values: List[float]
    running_sup: List[float]

    @property
    def summary(self) -> float:
        return self.running_sup[-1]


def loglaw_statistic(trajectory) -> LogLawStatistic:
    """-log sys(t) / log t on t >= e and its running supremum.

    ``trajectory`` is a sequence of TrajectoryPoint or (t, sys) pairs.
    """
    ts, vals = [], []
    for p in trajectory:
        t, s = (p.t, p.sys) if isinstance(p, TrajectoryPoint) else p
        if t >= math.e:
            ts.append(float(t))
            vals.append(-math.log(s) / math.log(t))
    if not ts:
        raise DomainError("the trajectory has no time t >= e")
    sup = list(np.maximum.accumulate(np.array(vals)))
    return LogLawStatistic(ts, vals, [float(x) for x in sup])


# ---------------------------------------------------------------------------
# Khinchin-type scans


def _bands(lengths: Sequence[float]) -> Dict[int, int]:
    """Counts per dyadic band (2^(k-1), 2^k], keyed by k."""
    c = Counter(math.ceil(math.log2(x)) if x > 0 else 0 for x in lengths)
    return dict(sorted(c.items()))


def satisfies(phi: PhiSpec, v: Vec2) -> bool:
    return abs(float(v.a)) < float(phi_eval(phi, v.norm()))


@dataclass(frozen=True)
class SurfaceScan:
    solutions: List[SaddleConnection]
    bands: Dict[int, int]
    stats: EnumerationStats

    @property
    def count(self) -> int:
        return len(self.solutions)


def khinchin_surface_scan(S: Surface, phi: PhiSpec, L_max,
                          bundle: Optional[Tuple[int, int]] = None) -> SurfaceScan:
    """Connections with |Re v| < phi(|v|) and |v| <= L_max.

    With ``bundle`` only up-oriented connections carrying that label count.
    """
    stats = EnumerationStats()
    conns = enumerate_connections(S, L_max, stats=stats, strip=phi)
    sols = [c for c in conns if satisfies(phi, c.holonomy)]
    if bundle is not None:
        sols = [c for c in sols if c.orientation == "up" and c.bundle == tuple(bundle)]
    return SurfaceScan(sols, _bands([c.length for c in sols]), stats)


@dataclass(frozen=True)
class IetSolution:
    q: int
    p: int
    n: int
    displacement: object
    reduced: object  # True, False or UNCERTAIN


def khinchin_iet_scan(T: Iet, phi: PhiSpec, n_max: int, pair: Optional[Tuple[int, int]] = None,
                      reduced_only: bool = False) -> List[IetSolution]:
    """Triples with |T^n u^b_q - u^t_p| < phi(n), n <= n_max.

    Every solution is tagged with its reduced status; ``reduced_only`` drops
    the others.  An uncertain float step ends the orbit of that q.
    """
    qs = [pair[0]] if pair else list(range(2, T.d + 1))
    out = []
    for q in qs:
        keep = lambda n, D: abs(D) < phi_eval(phi, n)
        for rec in scan_triples(T, q, n_max, keep=keep):
            if rec.D is None:
                break
            if pair and rec.p != pair[1]:
                continue
            if reduced_only and rec.reduced is not True:
                continue
            out.append(IetSolution(q, rec.p, rec.n, rec.D, rec.reduced))
    return sorted(out, key=lambda s: (s.n, s.q, s.p))


def angular_measure(phi_value: float, length: float) -> float:
    """Measure of the angles whose rotation puts v within phi of the vertical."""
    r = phi_value / length
    return 2 * math.pi if r >= 1 else 4 * math.asin(r)


@dataclass(frozen=True)
class BorelCantelli:
    band_edges: List[float]
    band_sums: List[float]
    partial_sums: List[float]

    @property
    def last_band(self) -> float:
        return self.band_sums[-1] if self.band_sums else 0.0


def borel_cantelli_sum(S: Surface, phi: PhiSpec, L_max) -> BorelCantelli:
    """Sum over all connections of the angular measure where the condition holds.

    Partial sums are reported at the dyadic edges 1, 2, 4, ... up to L_max.
    """
    conns = enumerate_connections(S, L_max)
    K = max(0, math.ceil(math.log2(float(L_max))))
    edges = [float(2 ** k) for k in range(K + 1)]
    edges[-1] = float(L_max)
    sums = [0.0] * len(edges)
    for c in conns:
        k = 0 if c.length <= 1 else min(len(edges) - 1, math.ceil(math.log2(c.length)))
        sums[k] += angular_measure(float(phi_eval(phi, c.length)), c.length)
    partial = list(np.cumsum(sums))
    return BorelCantelli(edges, sums, [float(x) for x in partial])


@dataclass(frozen=True)
class BundleScan:
    theta: float
    counts: Dict[Tuple[int, int], int]
    pairs_over: int  # bundle pairs with at least K solutions
    unlabelled: int  # solutions outside the labelled family


def rotation_bundle_scan(S: Surface, phi: PhiSpec, thetas: Sequence[float], L_max,
                         K: int) -> List[BundleScan]:
    """Per angle, count up-oriented solutions per bundle on the rotated surface."""
    if not S.perm.is_rotational():
        raise StructureError("the bundle scan needs a rotational permutation")
    out = []
    for th in thetas:
        R = rotate_surface(S, th)
        sols = [c for c in enumerate_connections(R, L_max, strip=phi)
                if satisfies(phi, c.holonomy) and c.orientation == "up"]
        counts = Counter(c.bundle for c in sols if c.bundle is not None)
        counts = dict(sorted(counts.items()))
        over = sum(1 for v in counts.values() if v >= K)
        out.append(BundleScan(float(th), counts, over, sum(1 for c in sols if c.bundle is None)))
    return out


def min_instant_bound_check(S: Surface, eps: float, L_max, floor: float = 2.0) -> Tuple[int, int]:
    """(violations, considered) of min_instant <= (1 + eps) log|v| over |v| >= floor."""
    bad = total = 0
    for c in enumerate_connections(S, L_max):
        if c.orientation == "horizontal" or c.length < floor:
            continue
        total += 1
        if flow_quantities(c.holonomy, 0).min_instant > (1 + eps) * math.log(c.length):
            bad += 1
    return bad, total


def psi_from_phi(phi: PhiSpec) -> Callable[[float], float]:
    """s -> e^s phi(e^s), the exponential reparametrization."""
    return lambda s: math.exp(s) * float(phi_eval(phi, math.exp(s)))


def bridge_integrals(phi: PhiSpec, T: float = 10.0) -> Tuple[float, float]:
    """(integral of psi over [0, T], integral of phi over [1, e^T]) by quadrature."""
    psi = psi_from_phi(phi)
    lhs = mpmath.quad(lambda s: psi(float(s)), [0, T / 4, T / 2, T])
    f = lambda x: float(phi_eval(phi, float(x)))
    pts = [1] + [math.exp(T * k / 8) for k in range(1, 9)]
    rhs = mpmath.quad(f, pts)
    return float(lhs), float(rhs)


# ---------------------------------------------------------------------------
# random data and the sample runner


def random_fraction(rng: np.random.Generator, lo, hi, bits: int = 64) -> Fraction:
    """Uniform dyadic rational in (lo, hi) with ``bits`` random bits."""
    nbytes = (bits + 7) // 8
    k = int.from_bytes(rng.bytes(nbytes), "big") >> (8 * nbytes - bits)
    u = Fraction(2 * k + 1, 2 ** (bits + 1))
    return Fraction(lo) + (Fraction(hi) - Fraction(lo)) * u


def random_suspension(rng: np.random.Generator, perm: Permutation, bits: int = 64,
                      spread=Fraction(9, 20)) -> Tuple[Fraction, ...]:
    """Canonical suspension data plus uniform noise, redrawn until valid."""
    base = canonical_suspension(perm)
    for _ in range(1000):
        tau = tuple(b + random_fraction(rng, -spread, spread, bits) for b in base)
        if validate_suspension(perm, tau):
            return tau
    return tuple(base)


def random_surface(rng: np.random.Generator, perm, bits: int = 64, unit_area: bool = True) -> Surface:
    perm = perm if isinstance(perm, Permutation) else Permutation(perm)
    lam = [random_fraction(rng, Fraction(1, 5), 1, bits) for _ in range(perm.d)]
    tau = random_suspension(rng, perm, bits)
    S = build_surface(perm, lam, tau)
    if unit_area:
        S = build_surface(perm, [x / S.area for x in lam], tau)
    return S


def random_torus(rng: np.random.Generator, bits: int = 64, unit_area: bool = True) -> Surface:
    lam = [random_fraction(rng, Fraction(1, 5), 1, bits) for _ in range(2)]
    tau = [random_fraction(rng, Fraction(1, 5), 1, bits),
           -random_fraction(rng, Fraction(1, 5), 1, bits)]
    S = build_surface((2, 1), lam, tau)
    if unit_area:
        S = build_surface((2, 1), [x / S.area for x in lam], tau)
    return S


def random_admissible(rng: np.random.Generator, d: int) -> Permutation:
    perms = list(admissible_permutations(d))
    return perms[int(rng.integers(len(perms)))]


def sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


@dataclass(frozen=True)
class ExperimentRecord:
    seed: int
    index: int
    params: dict
    outputs: dict


def _run_one(job):
    fn, seed, index, params = job
    return ExperimentRecord(seed, index, params, fn(sample_rng(seed, index), params))


def run_samples(fn: Callable, n: int, seed: int, params: dict, workers: int = 1) -> List[ExperimentRecord]:
    """Run ``fn(rng, params)`` for samples 0..n-1, ordered by sample index.

    ``fn`` must be a module-level function when ``workers > 1``.
    """
    jobs = [(fn, seed, i, params) for i in range(n)]
    if workers <= 1:
        recs = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            recs = list(ex.map(_run_one, jobs))
    return sorted(recs, key=lambda r: r.index)


# sample functions used by the experiments and the command line

def loglaw_sample(rng, params) -> dict:
    S = random_torus(rng, params.get("bits", 4096))
    T, dt = params.get("t_max", 1000.0), params.get("dt", 0.25)
    grid = [k * dt for k in range(int(round(T / dt)) + 1)]
    traj = torus_systole_trajectory(S, grid)
    stat = loglaw_statistic(traj)
    k = int(np.argmax(stat.values))
    tail = [v for t, v in zip(stat.times, stat.values) if t >= T / 10]
    return {"sup": stat.summary, "t_at_sup": stat.times[k], "tail_sup": max(tail),
            "final": stat.values[-1], "min_sys": min(p.sys for p in traj)}


def surface_khinchin_sample(rng, params) -> dict:
    d = params.get("d", 2)
    perm = random_admissible(rng, d) if d > 2 else Permutation((2, 1))
    S = random_surface(rng, perm, params.get("bits", 64))
    out = {"perm": list(perm.images)}
    for name in ("phi_convergent", "phi_divergent"):
        if name not in params:
            continue
        phi = PhiSpec(*[Fraction(x) for x in params[name]])
        top = khinchin_surface_scan(S, phi, max(params["lmax"]))
        out[name] = [sum(1 for c in top.solutions if c.length <= L) for L in params["lmax"]]
    return out


def rotation_sample(rng, params) -> dict:
    d = params.get("d", 3)
    perm = Permutation(params.get("perm", [d] + list(range(1, d))))
    S = random_surface(rng, perm, params.get("bits", 64))
    lo, hi = rotation_window(S)
    th = lo + (hi - lo) * float(rng.random())
    phi = PhiSpec(*[Fraction(x) for x in params["phi"]])
    scan = rotation_bundle_scan(S, phi, [th], params["lmax"], params["K"])[0]
    return {"theta": scan.theta, "pairs_over": scan.pairs_over,
            "counts": {f"{q},{p}": v for (q, p), v in scan.counts.items()},
            "unlabelled": scan.unlabelled}
