"""Command-line entry point and text codecs.

Exit codes: 0 success, 1 validation or domain error, 2 budget exhausted.
Every output starts with ``# config_hash=<sha256> seed=<seed>``; the hash
covers the verb and every option that can change the result, so worker
counts and output paths are left out of it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from fractions import Fraction
from typing import List, Sequence

import mpmath

from . import diophantine as dio
from .connections import connections_csv, enumerate_connections
from .core import (
    RATIONAL,
    ArtifactError,
    BudgetExceeded,
    ValidationError,
    Vec2,
    default_precision,
    float_backend,
    format_scalar,
    parse_phi,
    parse_scalar,
)
from .dynamics import (
    khinchin_iet_scan,
    khinchin_surface_scan,
    loglaw_sample,
    rotation_bundle_scan,
    rotation_sample,
    run_samples,
    sample_rng,
    surface_khinchin_sample,
    systole_trajectory,
)
from .iet import Permutation
from .suspension import (
    Surface,
    build_surface,
    rotation_window,
    stratum_combinatorial,
    stratum_geometric,
)

# ---------------------------------------------------------------------------
# surface files


def _first_fixed_block(perm: Permutation):
    top = 0
    for k in range(1, perm.d):
        top = max(top, perm(k))
        if top == k:
            return k
    return None


def parse_surface(text: str):
    """Parse ``key=value`` lines into (perm, lengths, tau, backend).

    Blank lines and ``#`` comments are ignored.  ``tau`` is optional and
    defaults to the canonical suspension.
    """
    fields, where = {}, {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {no}: expected key=value", code="parse", line=no)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in ("d", "pi", "lambda", "tau", "backend"):
            raise ValidationError(f"line {no}: unknown key {key!r}", code="parse", line=no)
        if key in fields:
            raise ValidationError(f"line {no}: duplicate key {key!r}", code="parse", line=no)
        fields[key], where[key] = val, no
    for key in ("pi", "lambda"):
        if key not in fields:
            raise ValidationError(f"missing key {key!r}", code="parse", line=None)
    backend = RATIONAL
    if "backend" in fields:
        b = fields["backend"]
        if b == "rational":
            backend = RATIONAL
        elif b.startswith("float"):
            bits = b[len("float"):].lstrip(":") or str(default_precision())
            try:
                backend = float_backend(int(bits))
            except ValueError:
                raise ValidationError(f"line {where['backend']}: bad backend {b!r}",
                                      code="parse", line=where["backend"])
        else:
            raise ValidationError(f"line {where['backend']}: bad backend {b!r}",
                                  code="parse", line=where["backend"])

    def ints(key):
        try:
            return [int(x) for x in fields[key].split()]
        except ValueError:
            raise ValidationError(f"line {where[key]}: {key} needs integers",
                                  code="parse", line=where[key])

    def scalars(key):
        try:
            return [parse_scalar(x, backend) for x in fields[key].split()]
        except (ValueError, ZeroDivisionError):
            raise ValidationError(f"line {where[key]}: bad number in {key}",
                                  code="parse", line=where[key])

    images = ints("pi")
    if "d" in fields:
        d = ints("d")
        if len(d) != 1 or d[0] != len(images):
            raise ValidationError(f"line {where['pi']}: pi has {len(images)} entries, d={fields['d']}",
                                  code="arity", line=where["pi"])
    try:
        perm = Permutation(images)
    except ValidationError as exc:
        raise ValidationError(f"line {where['pi']}: {exc}", code=exc.code, line=where["pi"])
    k = _first_fixed_block(perm)
    if k is not None:
        raise ValidationError(f"line {where['pi']}: pi maps {{1..{k}}} to itself (k={k})",
                              code="perm-admissible", line=where["pi"], k=k)
    lengths = scalars("lambda")
    if len(lengths) != perm.d:
        raise ValidationError(f"line {where['lambda']}: lambda has {len(lengths)} entries, need {perm.d}",
                              code="arity", line=where["lambda"])
    tau = None
    if "tau" in fields:
        tau = scalars("tau")
        if len(tau) != perm.d:
            raise ValidationError(f"line {where['tau']}: tau has {len(tau)} entries, need {perm.d}",
                                  code="arity", line=where["tau"])
    return perm, lengths, tau, backend


def load_surface(text: str) -> Surface:
    perm, lengths, tau, backend = parse_surface(text)
    return build_surface(perm, lengths, tau, backend)


def emit_surface(S: Surface) -> str:
    lines = [f"d={S.d}", "pi=" + " ".join(str(x) for x in S.perm.images),
             "lambda=" + " ".join(format_scalar(x) for x in S.lengths[1:]),
             "tau=" + " ".join(format_scalar(x) for x in S.tau[1:])]
    if not S.backend.exact:
        lines.append(f"backend=float:{S.backend.prec}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# scalars for alpha


def parse_alpha(text: str, prec: int):
    """A rational literal, ``golden``, or ``quad:a,D,b`` meaning (a + sqrt D) / b."""
    s = text.strip()
    if s == "golden":
        s = "quad:1,5,2"
    if s.startswith("quad:"):
        try:
            a, D, b = (int(x) for x in s[5:].split(","))
        except ValueError:
            raise ValidationError(f"bad quadratic literal {text!r}", code="alpha-syntax")
        if D < 0 or b == 0:
            raise ValidationError(f"bad quadratic literal {text!r}", code="alpha-syntax")
        return dio.quadratic(a, D, b, prec)
    try:
        return Fraction(s)
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"bad alpha literal {text!r}", code="alpha-syntax")


def _fmt(x) -> str:
    if isinstance(x, (Fraction, int)):
        return format_scalar(Fraction(x))
    return repr(float(x))


# ---------------------------------------------------------------------------
# output helpers


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def header(config: dict) -> str:
    return f"# config_hash={config_hash(config)} seed={config.get('seed')}\n"


def _csv(rows: Sequence[Sequence], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def _records(recs) -> List[dict]:
    return [{"index": r.index, "seed": r.seed, **r.outputs} for r in recs]


def _positive(name, value):
    if value is not None and not value > 0:
        raise ValidationError(f"--{name} must be positive", code="budget")


# ---------------------------------------------------------------------------
# verbs


def _read_surface(args) -> Surface:
    if not args.surface:
        raise ValidationError("--surface is required", code="usage")
    with open(_path(args, args.surface)) as fh:
        return load_surface(fh.read())


def _path(args, p: str) -> str:
    return p if os.path.isabs(p) else os.path.join(args.workdir, p)


def verb_build(args, config) -> str:
    S = _read_surface(args)
    rec = {"pi": list(S.perm.images),
           "lambda": [_fmt(x) for x in S.lengths[1:]],
           "tau": [_fmt(x) for x in S.tau[1:]],
           "zeta": [[_fmt(z.a), _fmt(z.b)] for z in S.zeta[1:]],
           "heights": [_fmt(x) for x in S.heights[1:]],
           "theta": [[_fmt(t.a), _fmt(t.b)] for t in S.theta[1:]],
           "area": _fmt(S.area),
           "stratum_combinatorial": list(stratum_combinatorial(S.perm)),
           "stratum_geometric": list(stratum_geometric(S))}
    return _jsonl([rec])


def verb_enumerate(args, config) -> str:
    S = _read_surface(args)
    _positive("lmax", args.lmax)
    return connections_csv(enumerate_connections(S, Fraction(args.lmax)))


def verb_flow(args, config) -> str:
    if args.samples:
        params = {"t_max": args.tmax, "dt": args.dt, "bits": args.bits}
        return _jsonl(_records(run_samples(loglaw_sample, args.samples, args.seed, params,
                                           args.workers)))
    S = _read_surface(args)
    _positive("tmax", args.tmax)
    _positive("dt", args.dt)
    grid = [k * args.dt for k in range(int(round(args.tmax / args.dt)) + 1)]
    L = float(args.lmax) if args.lmax else None
    pts = systole_trajectory(S, grid, L)
    rows = [(repr(p.t), repr(p.sys),
             ";".join(f"{q}-{pp}:{v!r}" for (q, pp), v in sorted(p.bundles.items())),
             int(p.certified)) for p in pts]
    return _csv(rows, ["t", "systole", "bundle_systoles", "certified"])


def verb_khinchin(args, config) -> str:
    phi = parse_phi(args.phi)
    if args.mode == "surface":
        if args.samples:
            lmax = [float(x) for x in args.lmax_list.split(",")]
            params = {"d": args.d, "lmax": lmax, "bits": args.bits,
                      "phi_divergent": [str(x) for x in (phi.c, phi.p, phi.q)]}
            if args.phi_convergent:
                pc = parse_phi(args.phi_convergent)
                params["phi_convergent"] = [str(x) for x in (pc.c, pc.p, pc.q)]
            return _jsonl(_records(run_samples(surface_khinchin_sample, args.samples, args.seed,
                                               params, args.workers)))
        S = _read_surface(args)
        _positive("lmax", args.lmax)
        scan = khinchin_surface_scan(S, phi, Fraction(args.lmax))
        return connections_csv(scan.solutions)
    if args.mode == "iet":
        S = _read_surface(args)
        _positive("nmax", args.nmax)
        sols = khinchin_iet_scan(S.iet, phi, args.nmax)
        rows = [(s.q, s.p, s.n, _fmt(s.displacement),
                 "uncertain" if s.reduced not in (True, False) else int(s.reduced)) for s in sols]
        return _csv(rows, ["q", "p", "n", "displacement", "reduced"])
    # twisted
    _positive("nmax", args.nmax)
    if args.alpha_samples:
        params = {"phi": [str(x) for x in (phi.c, phi.p, phi.q)], "nmax": args.nmax,
                  "N": args.N, "gamma": args.gamma}
        return _jsonl(_records(run_samples(dio.twisted_sample, args.alpha_samples, args.seed,
                                           params, args.workers)))
    if args.alpha is None:
        raise ValidationError("--alpha or --alpha-samples is required", code="usage")
    alpha = parse_alpha(args.alpha, args.prec)
    x, y = parse_alpha(args.x, args.prec), parse_alpha(args.y, args.prec)
    with mpmath.workprec(args.prec):
        vals = dio.frac_values(alpha, x, y, args.nmax)
    sols = set(dio.direct_solutions(alpha, Vec2(x, y), phi, args.nmax))
    rows = [(n, repr(float(vals[n - 1])), int(n in sols)) for n in range(1, args.nmax + 1)]
    return _csv(rows, ["n", "fractional", "solution"])


def verb_cf(args, config) -> str:
    alpha = parse_alpha(args.alpha, args.prec)
    with mpmath.workprec(args.prec):
        conv = dio.cf_expand(alpha, args.depth)
    rows = []
    for c in conv:
        length = dio.atom_length(c) if c.q > 0 else ""
        rows.append((c.n, c.a, c.q, c.p, c.r_prime.a, c.r_prime.b, _fmt(length) if length != "" else ""))
    return _csv(rows, ["n", "a", "q", "p", "q_prime", "p_prime", "atom_length"])


def verb_twisted(args, config) -> str:
    alpha = parse_alpha(args.alpha, args.prec)
    x, y = parse_alpha(args.x, args.prec), parse_alpha(args.y, args.prec)
    rows = []
    with mpmath.workprec(args.prec):
        conv = dio.cf_expand(alpha, 2 * args.N * (args.steps - 1) + 1)
        for n in range(1, args.steps + 1):
            t = dio.twisted_step(alpha, Vec2(x, y), args.N, n, convergents=conv)
            rows.append((n, t.branch, t.nu, t.k, t.j, t.k_prime, t.j_prime,
                         _fmt(t.s.a), _fmt(t.s.b), _fmt(t.s_prime.a), _fmt(t.s_prime.b),
                         _fmt(t.det()), repr(float(dio.upsilon(t, alpha)))))
    return _csv(rows, ["n", "branch", "nu", "k", "j", "k_prime", "j_prime",
                       "s_q", "s_p", "s_prime_q", "s_prime_p", "det", "upsilon"])


def verb_rotate_scan(args, config) -> str:
    phi = parse_phi(args.phi)
    _positive("lmax", args.lmax)
    if args.samples:
        params = {"d": args.d, "phi": [str(x) for x in (phi.c, phi.p, phi.q)],
                  "lmax": float(args.lmax), "K": args.K, "bits": args.bits}
        return _jsonl(_records(run_samples(rotation_sample, args.samples, args.seed, params,
                                           args.workers)))
    S = _read_surface(args)
    lo, hi = rotation_window(S)
    thetas = []
    for i in range(args.thetas):
        rng = sample_rng(args.seed, i)
        thetas.append(lo + (hi - lo) * float(rng.random()))
    scans = rotation_bundle_scan(S, phi, thetas, float(args.lmax), args.K)
    return _jsonl([{"index": i, "theta": s.theta, "pairs_over": s.pairs_over,
                    "counts": {f"{q},{p}": v for (q, p), v in s.counts.items()},
                    "unlabelled": s.unlabelled} for i, s in enumerate(scans)])


VERBS = {"build": verb_build, "enumerate": verb_enumerate, "flow": verb_flow,
         "khinchin": verb_khinchin, "cf": verb_cf, "twisted": verb_twisted,
         "rotate-scan": verb_rotate_scan}

# options that never change the output bytes
_UNHASHED = {"workers", "out", "workdir", "verb"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zipsurf", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file (default: standard output)")
    common.add_argument("--workdir", default=".", help="base directory for relative paths")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--prec", type=int, default=max(256, default_precision()),
                        help="bits for irrational alpha")
    sub = p.add_subparsers(dest="verb", required=True)

    b = sub.add_parser("build", parents=[common], help="build a surface and report its data")
    b.add_argument("--surface")

    e = sub.add_parser("enumerate", parents=[common], help="saddle connections up to a length")
    e.add_argument("--surface")
    e.add_argument("--lmax", type=Fraction, required=True)

    f = sub.add_parser("flow", parents=[common], help="systoles along the diagonal flow")
    f.add_argument("--surface")
    f.add_argument("--tmax", type=float, default=10.0)
    f.add_argument("--dt", type=float, default=0.25)
    f.add_argument("--lmax", type=Fraction)
    f.add_argument("--samples", type=int, default=0, help="random unit-area tori instead of --surface")
    f.add_argument("--bits", type=int, default=4096)

    k = sub.add_parser("khinchin", parents=[common], help="Khinchin-type solution scans")
    k.add_argument("--mode", choices=["surface", "iet", "twisted"], default="surface")
    k.add_argument("--phi", default="1,1,0")
    k.add_argument("--phi-convergent", dest="phi_convergent")
    k.add_argument("--surface")
    k.add_argument("--lmax", type=Fraction, default=Fraction(20))
    k.add_argument("--lmax-list", dest="lmax_list", default="20,40,80")
    k.add_argument("--nmax", type=int, default=1000)
    k.add_argument("--samples", type=int, default=0, help="random surfaces (surface mode)")
    k.add_argument("--d", type=int, default=3)
    k.add_argument("--bits", type=int, default=64)
    k.add_argument("--alpha")
    k.add_argument("--x", default="0")
    k.add_argument("--y", default="0")
    k.add_argument("--alpha-samples", dest="alpha_samples", type=int, default=0)
    k.add_argument("--N", type=int, default=3)
    k.add_argument("--gamma", type=float, default=1.1)

    c = sub.add_parser("cf", parents=[common], help="continued-fraction table")
    c.add_argument("--alpha", required=True)
    c.add_argument("--depth", type=int, default=10)

    t = sub.add_parser("twisted", parents=[common], help="twisted approximations")
    t.add_argument("--alpha", required=True)
    t.add_argument("--x", default="0")
    t.add_argument("--y", default="0")
    t.add_argument("--N", type=int, default=3)
    t.add_argument("--steps", type=int, default=3)

    r = sub.add_parser("rotate-scan", parents=[common], help="bundle counts over rotation angles")
    r.add_argument("--surface")
    r.add_argument("--phi", default="1,1,0")
    r.add_argument("--lmax", type=Fraction, default=Fraction(100))
    r.add_argument("--K", type=int, default=3)
    r.add_argument("--thetas", type=int, default=10)
    r.add_argument("--samples", type=int, default=0, help="random rotational surfaces")
    r.add_argument("--d", type=int, default=3)
    r.add_argument("--bits", type=int, default=64)
    return p


def run(argv: Sequence[str] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    config = {key: val for key, val in sorted(vars(args).items()) if key not in _UNHASHED}
    config["verb"] = args.verb
    if getattr(args, "surface", None):
        try:
            with open(_path(args, args.surface), "rb") as fh:
                config["surface"] = hashlib.sha256(fh.read()).hexdigest()
        except OSError as exc:
            print(f"error[io]: {exc}", file=stderr)
            return 1
    for key in ("workers",):
        if getattr(args, key, 1) < 1:
            print("error[validation]: --workers must be >= 1", file=stderr)
            return 1
    try:
        body = VERBS[args.verb](args, config)
    except BudgetExceeded as exc:
        print(f"error[{exc.code}]: {exc}", file=stderr)
        return 2
    except ArtifactError as exc:
        print(f"error[{exc.code}]: {type(exc).__name__}: {exc}", file=stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=stderr)
        return 1
    text = header(config) + body
    if args.out:
        with open(_path(args, args.out), "w", newline="") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
