"""Admissible-kernel type arithmetic and Lebesgue mapping-exponent inference.

A classifiable term is read off as the exponent tuple

    R^N Rs^M E[j,a] Es[k,b] P^-t0 (phi powers, sum -t) r^l rs^m,

and classified by

    smooth type  s   = 2n + (j + k) + min(2, t - l - m) - 2*(t0 + t - l - m)
    type         tau = s - max(0, 2 - N - M - a - b)

with explicit gamma weights netted per side against the E second index first:
a nonnegative net folds into the index, a negative net becomes a singular
prefix (1/gamma^c or 1/gamma*^c) reported alongside the class.  Both E first
indices contribute to s: the distance power |zeta - z|^(j+k) does not care
which side carries it, and the replayed derivations require the symmetric
count (see the decisions ledger for the discrepancy with a narrower reading).

Positive P powers are expanded (P = E[2,0] + gamma gamma* E[0,0]Es[0,0])
before classification, so products like E[0,0]*P^1*P^-n classify exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import inf

from .kexpr import Atom, KernelExpr, KernelTerm, atom, normalize

__all__ = [
    "DoubleType",
    "ClassifiedType",
    "MappingProfile",
    "IsotropicKernel",
    "ClassificationError",
    "smooth_type",
    "op_type",
    "double_type",
    "classify",
    "mapping",
    "z_chain",
    "integrability_threshold",
]


class ClassificationError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DoubleType:
    tau: int
    s: int

    def __post_init__(self):
        if self.tau > self.s:
            raise ClassificationError(f"tau={self.tau} exceeds s={self.s}")

    def min(self, other: "DoubleType") -> "DoubleType":
        return DoubleType(min(self.tau, other.tau), min(self.s, other.s))

    def dominates(self, other: "DoubleType") -> bool:
        """Componentwise >=: a (tau,s) class is contained in any weaker one."""
        return self.tau >= other.tau and self.s >= other.s

    def __str__(self):
        return f"({self.tau},{self.s})"


# prefix = (zeta-side gamma exponent, z-side gamma exponent), both <= 0
Prefix = tuple


@dataclass(frozen=True)
class ClassifiedType:
    """Overall (min tau, min s) plus the per-singular-prefix breakdown."""

    overall: DoubleType
    prefixes: dict

    def __str__(self):
        parts = []
        for (a, b), dt in sorted(self.prefixes.items()):
            w = _prefix_str((a, b))
            parts.append(f"{w}{dt}" if w else str(dt))
        return " + ".join(parts)


def _prefix_str(p: Prefix) -> str:
    a, b = p
    bits = []
    if a < 0:
        bits.append("1/gamma" + (f"^{-a}" if a < -1 else ""))
    if b < 0:
        bits.append("1/gamma*" + (f"^{-b}" if b < -1 else ""))
    return "(" + " ".join(bits) + ")·" if bits else ""


def _expand_positive_p(t: KernelTerm, n: int) -> list[KernelTerm]:
    """P^e with e > 0 expands through P = E[2,0] + gamma gamma* E00 Es00."""
    e = 0
    rest = []
    for a in t.atoms:
        if a.kind == "P" and a.args[0] > 0:
            e += a.args[0]
        else:
            rest.append(a)
    if e == 0:
        return [t]
    out = [KernelTerm(t.coeff, tuple(rest))]
    branch1 = (atom("E", 2, 0),)
    branch2 = (atom("Gamma", 1), atom("GammaStar", 1), atom("E", 0, 0),
               atom("Es", 0, 0))
    for _ in range(e):
        nxt = []
        for tt in out:
            nxt.append(KernelTerm(tt.coeff, tt.atoms + branch1))
            nxt.append(KernelTerm(tt.coeff * 2, tt.atoms + branch2))
        out = nxt
    return out


@dataclass(frozen=True)
class _Profile:
    N: int
    M: int
    j: int
    a: int
    k: int
    b: int
    t0: Fraction
    t: int
    l: int
    m: int
    g: int       # explicit zeta-side gamma exponent
    gs: int      # explicit z-side gamma exponent
    aclass: tuple  # AClass placeholders present in the term


def _read_term(kt: KernelTerm) -> _Profile:
    N = M = j = a = k = b = l = m = g = gs = 0
    t0 = Fraction(0)
    tsum = 0
    aclass = []
    for at in kt.atoms:
        if at.kind == "R":
            N += at.args[0]
        elif at.kind == "Rs":
            M += at.args[0]
        elif at.kind == "E":
            j += at.args[0]
            a += at.args[1]
        elif at.kind == "Es":
            k += at.args[0]
            b += at.args[1]
        elif at.kind == "P":
            t0 += -Fraction(at.args[0])
        elif at.kind in ("Phi", "PhiBar", "PhiStar", "PhiBarStar"):
            tsum += at.args[0]
        elif at.kind == "r":
            l += at.args[0]
        elif at.kind == "rs":
            m += at.args[0]
        elif at.kind == "Gamma":
            g += at.args[0]
        elif at.kind == "GammaStar":
            gs += at.args[0]
        elif at.kind == "LRho":
            # frame derivative of rho^2: a distance factor, class E[1,0]
            if at.args[2]:
                k += 1
            else:
                j += 1
        elif at.kind == "Zdiff":
            j += 1
        elif at.kind == "Delta":
            pass  # bounded constant
        elif at.kind == "AClass":
            aclass.append(at.args)
        else:
            raise ClassificationError(f"atom {at.kind} is not classifiable")
    return _Profile(N, M, j, a, k, b, t0, -tsum, l, m, g, gs, tuple(aclass))


def _classify_term(t: KernelTerm, n: int):
    """Return (prefix, DoubleType) for one normalized term."""
    results = []
    for tt in _expand_positive_p(t, n):
        p = _read_term(tt)
        # net gamma weight per side; nonnegative nets fold into the E index,
        # negative nets become the singular prefix of the class.
        net_z = p.g + p.a
        net_zs = p.gs + p.b
        a_eff, pref_z = (net_z, 0) if net_z >= 0 else (0, net_z)
        b_eff, pref_zs = (net_zs, 0) if net_zs >= 0 else (0, net_zs)
        prefix = (pref_z, pref_zs)
        if p.aclass:
            # a placeholder class absorbs bounded companions; its (tau, s) is
            # the min over the placeholders present.
            dt = DoubleType(*p.aclass[0])
            for extra in p.aclass[1:]:
                dt = dt.min(DoubleType(*extra))
            results.append((prefix, dt))
            continue
        if p.t < 0:
            raise ClassificationError(
                f"positive support-function power sum {-p.t} in "
                f"'{_term_str(tt)}': not admissible"
            )
        if p.N + a_eff < 0 or p.M + b_eff < 0:
            raise ClassificationError(
                f"negative weight balance (N+a={p.N + a_eff}, "
                f"M+b={p.M + b_eff}) in '{_term_str(tt)}'"
            )
        w = p.t - p.l - p.m
        s = 2 * n + (p.j + p.k) + min(2, w) - 2 * (p.t0 + w)
        if s != int(s):
            raise ClassificationError("half-integer smooth type; not classifiable")
        s = int(s)
        tau = s - max(0, 2 - p.N - p.M - a_eff - b_eff)
        results.append((prefix, DoubleType(tau, s)))
    return results


def _term_str(t: KernelTerm) -> str:
    from .kexpr import format_expr, KernelExpr

    return format_expr(KernelExpr(1, (t,)))


def smooth_type(t: KernelTerm, n: int) -> int:
    """Smooth type of a single weight-free term."""
    classified = _classify_term(t, n)
    for prefix, dt in classified:
        if prefix != (0, 0):
            raise ClassificationError(
                "term carries a singular gamma prefix; classify via double_type"
            )
    return min(dt.s for _, dt in classified)


def op_type(t: KernelTerm, n: int) -> int:
    classified = _classify_term(t, n)
    for prefix, dt in classified:
        if prefix != (0, 0):
            raise ClassificationError(
                "term carries a singular gamma prefix; classify via double_type"
            )
    return min(dt.tau for _, dt in classified)


def classify(e: KernelExpr) -> ClassifiedType:
    """Per-prefix classification of a sum.  The expression type is the min
    over terms; singular 1/gamma prefixes are reported per bucket."""
    e = normalize(e, fold_gamma=False)
    if not e.terms:
        raise ClassificationError("no terms to classify")
    buckets: dict[Prefix, DoubleType] = {}
    overall = None
    for t in e.terms:
        for prefix, dt in _classify_term(t, e.n):
            cur = buckets.get(prefix)
            buckets[prefix] = dt if cur is None else cur.min(dt)
            overall = dt if overall is None else overall.min(dt)
    return ClassifiedType(overall, buckets)


def double_type(e: KernelExpr) -> ClassifiedType:
    return classify(e)


def canonical_buckets(e: KernelExpr) -> dict:
    """Prefix buckets with dominated entries removed.

    Bucket (p, dt) is dominated by (p', dt') when p >= p' componentwise and
    dt >= dt': a less singular weight with a stronger class sits inside the
    other class, so it carries no extra information.
    """
    raw = classify(e).prefixes
    items = list(raw.items())
    keep = {}
    for p, dt in items:
        dominated = False
        for q, du in items:
            if (p, dt) == (q, du):
                continue
            if p[0] >= q[0] and p[1] >= q[1] and dt.dominates(du):
                # strictly dominated, or equal classes on comparable prefixes
                if (p[0], p[1]) != (q[0], q[1]) or dt != du:
                    dominated = True
                    break
        if not dominated:
            keep[p] = dt
    return keep


# ---------------------------------------------------------------------------
# Mapping exponents


@dataclass(frozen=True)
class MappingProfile:
    n: int
    j: int
    entries: tuple  # of (p, s_sup); s_sup is a supremum, never attained


@dataclass(frozen=True)
class IsotropicKernel:
    """E_{m,0}/rho^{2k} with m - 2k >= 1 - 2n; gains 1/(2n) per application."""

    m: int
    k: int
    n: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if self.m - 2 * self.k < 1 - 2 * self.n:
            raise ValueError(
                f"m - 2k = {self.m - 2 * self.k} below isotropic bound {1 - 2 * self.n}"
            )

    def mapping(self, p):
        return _gain_mapping(p, Fraction(1, 2 * self.n))


def _gain_mapping(p, gain: Fraction):
    """sup{s: 1/s > 1/p - gain}; inf when the right side is <= 0."""
    inv_p = Fraction(0) if p == inf else 1 / Fraction(p)
    bound = inv_p - gain
    if bound <= 0:
        return inf
    return 1 / bound


def mapping(j: int, n: int, p) -> Fraction | float:
    """Supremum of target exponents for a type-j operator from L^p.

    The admissible target set is {s : 1/s > 1/p - j/(2n+2)}; the supremum is
    not attained (strict inequality side).
    """
    if j < 0:
        raise ValueError("operator type must be nonnegative here")
    return _gain_mapping(p, Fraction(j, 2 * n + 2))


def mapping_profile(j: int, n: int, ps=(1, 2, inf)) -> MappingProfile:
    return MappingProfile(n, j, tuple((p, mapping(j, n, p)) for p in ps))


def integrability_threshold(j: int, n: int) -> Fraction:
    """lambda_sup for integrating a type-j kernel: (2n+2)/(2n+2-j)."""
    if not (0 <= j < 2 * n + 2):
        raise ValueError(f"j={j} outside [0, {2 * n + 2})")
    return Fraction(2 * n + 2, 2 * n + 2 - j)


def z_chain(n: int, start_p) -> tuple[int, str]:
    """Number of type-1-plus-isotropic compositions from L^start_p to sup-norm.

    Per step the admissible part gains 1/(2n+2) and the isotropic part 1/(2n);
    the admissible gain is smaller, so it is the binding constraint.  Returns
    (step count, binding rule name).
    """
    if start_p != inf and Fraction(start_p) < 1:
        raise ValueError("start_p must be >= 1")
    inv0 = Fraction(0) if start_p == inf else 1 / Fraction(start_p)

    def steps(gain):
        k = 1
        while inv0 - k * gain >= 0:
            k += 1
        return k

    k_adm = steps(Fraction(1, 2 * n + 2))
    k_iso = steps(Fraction(1, 2 * n))
    binding = "admissible_type1" if k_adm >= k_iso else "isotropic"
    return max(k_adm, k_iso), binding
