"""Command-line front end: type checking, mapping exponents, derivative
expansion, derivation replay, geometry queries, integration, verification
suites, and report rendering.

Exit codes: 0 success / certification pass, 1 verification failure,
2 usage error.  Numeric commands write their report as JSON; rerunning with
the same configuration reproduces the bytes exactly.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from math import inf

import numpy as np

from . import kexpr, ktype, krewrite, quad
from .geom import builtin_domain, load_domain
from .quad import EPS_GRID


def _fail_usage(msg: str) -> int:
    print(msg, file=sys.stderr)
    return 2


def _load_domain_arg(arg: str):
    try:
        return builtin_domain(arg)
    except Exception:
        with open(arg, "r", encoding="utf-8") as fh:
            return load_domain(fh.read())


def _emit(report: dict, out_path: str | None):
    text = quad.report_to_json(report)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(text, end="")


def _frac_str(x) -> str:
    if x == inf:
        return "inf"
    f = Fraction(x)
    return str(f.numerator) if f.denominator == 1 else f"{f.numerator}/{f.denominator}"


def cmd_typecheck(args) -> int:
    try:
        e = kexpr.parse(args.expr, args.n)
        ct = ktype.classify(e)
    except (kexpr.ParseError, kexpr.SemanticError, ktype.ClassificationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    prefixes = {
        _prefix_key(p): {"tau": dt.tau, "s": dt.s}
        for p, dt in sorted(ct.prefixes.items())
    }
    out = {
        "tau": ct.overall.tau,
        "s": ct.overall.s,
        "prefix": prefixes,
        "binding_rule": "type_formula",
        "expr": kexpr.format_expr(e),
    }
    print(json.dumps(out, sort_keys=True))
    return 0


def _prefix_key(p) -> str:
    a, b = p
    if a == 0 and b == 0:
        return "1"
    parts = []
    if a < 0:
        parts.append(f"gamma^{a}")
    if b < 0:
        parts.append(f"gamma*^{b}")
    return " ".join(parts)


def cmd_map(args) -> int:
    p = inf if args.p in ("inf", "oo") else Fraction(args.p)
    out = {
        "j": args.j,
        "n": args.n,
        "p": args.p,
        "s_sup": _frac_str(ktype.mapping(args.j, args.n, p)),
        "strict": True,
        "integrability_threshold": _frac_str(
            ktype.integrability_threshold(args.j, args.n)
        )
        if 0 <= args.j < 2 * args.n + 2
        else None,
    }
    if args.chain:
        k, rule = ktype.z_chain(args.n, p)
        out["chain_steps_to_sup"] = k
        out["binding_rule"] = rule
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_derive(args) -> int:
    try:
        e = krewrite.parse_script_expr(args.expr, args.n)
        f = krewrite.parse_field(args.field)
        out = krewrite.apply_field(f, e)
    except (ValueError, krewrite.ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(kexpr.format_expr(out))
    return 0


def cmd_replay(args) -> int:
    try:
        d = krewrite.replay(args.script)
    except krewrite.ReplayError as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return 1
    if args.verbose:
        print("\n".join(d.trace))
    else:
        for line in d.trace:
            if not line.startswith("  ->"):
                print(line)
    print("certified" if d.certified else "certification FAILED")
    return 0 if d.certified else 1


def cmd_geom(args) -> int:
    d = _load_domain_arg(args.domain)
    z = _parse_point(args.point, d.n) if args.point else None
    out = {"domain": d.name, "n": d.n}
    if z is not None:
        out["r"] = d.r(z)
        out["gamma_euclid"] = d.gamma(z, "euclid")
        try:
            out["gamma_levi_dual"] = d.gamma(z, "levi_dual")
        except Exception:
            out["gamma_levi_dual"] = None
    if args.critical:
        crits = d.boundary_critical_points(n_seeds=200, seed=args.seed)
        rows = []
        for p in crits:
            idx, vals = d.morse_normal_form(p)
            rows.append(
                {"point": quad._fmt_pt(p), "index": idx,
                 "hessian_eigenvalues": [float(v) for v in vals]}
            )
        out["boundary_critical_points"] = rows
    print(json.dumps(out, sort_keys=True))
    return 0


def _parse_point(text: str, n: int):
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) == n:
        return np.array(vals, dtype=complex)
    if len(vals) == 2 * n:
        return np.array(vals[:n]) + 1j * np.array(vals[n:])
    raise ValueError(f"point needs {n} or {2*n} reals")


def cmd_integrate(args) -> int:
    d = _load_domain_arg(args.domain)
    ss = quad.sample(d, ("interior", args.eps), args.N, args.seed)
    est = quad.mc_integral(lambda p: 1.0, ss)
    report = quad._report(
        "integrate",
        {"domain": d.name, "region": "interior", "eps": args.eps,
         "N": args.N, "seed": args.seed},
        {"volume": est.as_dict()},
    )
    _emit(report, args.out)
    return 0


def cmd_verify(args) -> int:
    d = _load_domain_arg(args.domain)
    eps_list = args.eps or list(EPS_GRID)
    if args.suite == "bmk":
        if d.n == 1:
            rep = quad.verify_bmk(
                d, 0, lambda z: z[0] ** 3, [[0.3, 0.1]], args.N, args.seed,
                f_name="z^3", tol=1e-6,
            )
        elif args.test == "const":
            rep = quad.verify_bmk(
                d, 0, lambda z: 1.0, [[0.3, 0.0, 0.0, 0.0]], args.N,
                args.seed, f_name="1", tol=5e-3,
            )
        else:
            rep = quad.verify_bmk(
                d, 0, lambda z: np.conj(z[0]),
                [[0.3, 0.0, 0.0, 0.0], [0.0, 0.25, 0.1, 0.0],
                 [-0.2, 0.1, 0.0, 0.15]],
                args.N, args.seed,
                f_dbar=[lambda z: 1.0, lambda z: 0.0],
                f_name="conj(z1)", tol=1e-2,
            )
    elif args.suite == "typical":
        rep = quad.verify_typical_sweep(
            d, args.j, args.mu, args.lam, eps_list, args.N, args.seed,
        )
        rep["pass"] = rep["bounded"] if args.lam < 1.2 else rep["growing"]
    elif args.suite == "phiest":
        rep = quad.verify_phiest(d, eps_list, args.N, args.seed)
    elif args.suite == "phisymm":
        rep = quad.verify_phisymm(d, 0.05, [1e-2, 1e-3], args.N, args.seed)
    elif args.suite == "c1diff":
        rep = quad.verify_c1diff(d, [1e-1, 1e-2, 1e-3, 1e-4], args.N, args.seed)
    elif args.suite == "linf":
        rep = quad.verify_linf(d, eps_list, args.N, args.seed)
    elif args.suite == "adjoint":
        rep = quad.verify_adjoint(d, nodes_per_dim=args.nodes)
    else:
        return _fail_usage(f"unknown verify suite {args.suite!r}")
    _emit(rep, args.out)
    return 0 if rep.get("pass", False) else 1


def cmd_report(args) -> int:
    with open(args.file, "r", encoding="utf-8") as fh:
        rep = json.load(fh)
    print(f"command: {rep.get('command')}")
    print(f"schema:  {rep.get('schema_version')}")
    for k, v in sorted(rep.get("config", {}).items()):
        print(f"  config {k} = {v}")
    for key in sorted(rep):
        if key in ("command", "schema_version", "config", "versions"):
            continue
        val = rep[key]
        if isinstance(val, list):
            print(f"{key}: ({len(val)} rows)")
            for row in val[:20]:
                print(f"  {row}")
        else:
            print(f"{key}: {val}")
    return 0


def _apply_config_file(args, parser):
    """Optional key=value config file; explicit flags win."""
    if not getattr(args, "config", None):
        return args
    overrides = {}
    with open(args.config, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            k, _, v = line.partition("=")
            overrides[k.strip()] = v.strip()
    for k, v in overrides.items():
        if not hasattr(args, k):
            continue
        default = parser.get_default(k)
        if getattr(args, k) == default:
            cur = getattr(args, k)
            typ = type(default) if default is not None else str
            if typ is bool:
                setattr(args, k, v.lower() in ("1", "true", "yes"))
            elif default is None:
                setattr(args, k, v)
            else:
                setattr(args, k, typ(v))
    return args


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="kernelcalc",
        description="admissible-kernel type calculus and estimate verification",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("typecheck", help="classify a kernel expression")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("expr")
    p.set_defaults(fn=cmd_typecheck)

    p = sub.add_parser("map", help="Lebesgue mapping exponent of a type-j operator")
    p.add_argument("-j", type=int, required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("-p", default="2")
    p.add_argument("--chain", action="store_true",
                   help="also iterate to the sup-norm target")
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("derive", help="apply a first-order field to an expression")
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--field", required=True, help="L_m, L_n, Lam_k, Lam_n, or X")
    p.add_argument("expr")
    p.set_defaults(fn=cmd_derive)

    p = sub.add_parser("replay", help="replay and certify a derivation script")
    p.add_argument("script")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("geom", help="evaluate domain geometry")
    p.add_argument("--domain", required=True)
    p.add_argument("--point", default=None)
    p.add_argument("--critical", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_geom)

    p = sub.add_parser("integrate", help="Monte Carlo region integral")
    p.add_argument("--domain", required=True)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--N", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_integrate)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=["bmk", "typical", "phiest", "phisymm",
                                     "c1diff", "linf", "adjoint"])
    p.add_argument("--domain", required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--N", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--eps", type=float, nargs="*", default=None)
    p.add_argument("--j", type=int, default=1)
    p.add_argument("--mu", type=int, default=1)
    p.add_argument("--lam", type=float, default=1.1)
    p.add_argument("--test", default="const", choices=["const", "zbar"])
    p.add_argument("--nodes", type=int, default=32)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("report", help="render a JSON report")
    p.add_argument("file")
    p.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    args = _apply_config_file(args, ap)
    try:
        return args.fn(args)
    except (quad.SamplingError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
