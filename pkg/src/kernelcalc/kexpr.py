"""Formal kernel products: atoms, terms, sums, parser, printer, canonicalizer.

A kernel expression is a sum of terms; a term is a rational coefficient times
a multiset of atoms.  The six core atom kinds (R, E, Phi, P, r, Gamma, with
starred twins where meaningful) are what the text grammar can express.  The
rewrite engine registers further opaque atom kinds (frame derivatives of the
distance function, coordinate differences, Kronecker deltas, whole-class
placeholders) on top of the same algebra; those never round-trip through the
public grammar and are formatted with a distinguishing syntax instead.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Optional

__all__ = [
    "Atom",
    "KernelTerm",
    "KernelExpr",
    "ParseError",
    "SemanticError",
    "parse",
    "normalize",
    "format_expr",
    "atom",
    "term",
    "expr",
]


class ParseError(ValueError):
    """Syntax error; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class SemanticError(ValueError):
    """Well-formed text denoting an invalid atom (e.g. a positive P power)."""


# ---------------------------------------------------------------------------
# Atoms

# kind -> sort rank; lower ranks print first.  Gamma weights first so that
# singular 1/gamma prefixes are visually in front, P and defining-function
# powers last.
_KIND_RANK = {
    "Gamma": 0,
    "GammaStar": 1,
    "R": 2,
    "Rs": 3,
    "E": 4,
    "Es": 5,
    "LRho": 6,
    "Zdiff": 7,
    "Delta": 8,
    "AClass": 9,
    "D": 10,
    "Phi": 11,
    "PhiBar": 12,
    "PhiStar": 13,
    "PhiBarStar": 14,
    "P": 15,
    "r": 16,
    "rs": 17,
}

_PHI_KINDS = ("Phi", "PhiBar", "PhiStar", "PhiBarStar")


@dataclass(frozen=True, order=False)
class Atom:
    """One multiplicative factor.  `args` is a kind-specific parameter tuple.

    Core kinds and their args:
      R / Rs          (count,)            N-fold product of first derivatives
      E / Es          (j, k)              smooth class factor, |.| <~ xi_k |w|^j
      Phi...          (exponent,)         support-function power, any sign
      P               (exponent,)         P^exponent; parse only admits <= 0
      r / rs          (exponent,)         defining-function power, >= 0
      Gamma/GammaStar (exponent,)         explicit gradient-norm weight

    Rewrite-layer kinds:
      LRho            (index, bar, star)  frame derivative L/Lbar_index rho^2
      Zdiff           (bar,)              n-th frame coordinate difference
      Delta           (i, j)              Kronecker delta, indices sorted
      AClass          (tau, s)            placeholder for a whole type class
      D               (field, inner)      pending derivative of one atom
    """

    kind: str
    args: tuple

    def sort_key(self):
        return (_KIND_RANK[self.kind], self.args)

    def __lt__(self, other: "Atom"):
        return self.sort_key() < other.sort_key()


def atom(kind: str, *args) -> Atom:
    return Atom(kind, tuple(args))


# Exponent-carrying kinds merge by adding exponents; the identity is dropped.
# E merges pairwise on both indices and is never dropped: E[0,0] is a bounded
# smooth factor, not the constant 1.
_EXPONENT_KINDS = {"R", "Rs", "Phi", "PhiBar", "PhiStar", "PhiBarStar", "P",
                   "r", "rs", "Gamma", "GammaStar"}


@dataclass(frozen=True)
class KernelTerm:
    coeff: Fraction
    atoms: tuple  # sorted tuple of Atom

    def atom_key(self):
        return self.atoms


@dataclass(frozen=True)
class KernelExpr:
    n: int
    terms: tuple  # tuple of KernelTerm, canonically ordered

    def __add__(self, other: "KernelExpr") -> "KernelExpr":
        if self.n != other.n:
            raise ValueError("cannot add expressions of different dimension")
        return normalize(KernelExpr(self.n, self.terms + other.terms),
                         fold_gamma=False)

    def __sub__(self, other: "KernelExpr") -> "KernelExpr":
        return self + other.scale(Fraction(-1))

    def scale(self, c) -> "KernelExpr":
        c = Fraction(c)
        return KernelExpr(
            self.n, tuple(KernelTerm(t.coeff * c, t.atoms) for t in self.terms)
        )

    def __mul__(self, other: "KernelExpr") -> "KernelExpr":
        if self.n != other.n:
            raise ValueError("cannot multiply expressions of different dimension")
        out = []
        for a in self.terms:
            for b in other.terms:
                out.append(KernelTerm(a.coeff * b.coeff, a.atoms + b.atoms))
        return normalize(KernelExpr(self.n, tuple(out)), fold_gamma=False)

    def is_zero(self) -> bool:
        return not self.terms


def term(n: int, coeff, atoms: Iterable[Atom]) -> KernelExpr:
    return normalize(
        KernelExpr(n, (KernelTerm(Fraction(coeff), tuple(atoms)),))
    )


def expr(n: int, *terms_: KernelExpr) -> KernelExpr:
    out = KernelExpr(n, ())
    for t in terms_:
        out = out + t
    return out


# ---------------------------------------------------------------------------
# Canonicalization


def _merge_atoms(atoms: Iterable[Atom]) -> tuple[Optional[tuple], Fraction]:
    """Merge same-kind factors.  Returns (sorted atom tuple, sign) or
    (None, 0) when the product is identically zero (never for core kinds)."""
    exps: dict[str, int] = {}
    e_idx = {"E": None, "Es": None}
    rest: list[Atom] = []
    for a in atoms:
        if a.kind in _EXPONENT_KINDS:
            exps[a.kind] = exps.get(a.kind, 0) + a.args[0]
        elif a.kind in ("E", "Es"):
            j, k = a.args
            cur = e_idx[a.kind]
            e_idx[a.kind] = (j, k) if cur is None else (cur[0] + j, cur[1] + k)
        else:
            rest.append(a)
    out = list(rest)
    for kind, e in exps.items():
        if e != 0:
            out.append(Atom(kind, (e,)))
    for kind in ("E", "Es"):
        if e_idx[kind] is not None:
            out.append(Atom(kind, e_idx[kind]))
    out.sort(key=Atom.sort_key)
    return tuple(out), Fraction(1)


def normalize(e: KernelExpr, fold_gamma: bool = True) -> KernelExpr:
    """Canonical form: merged atoms, nonnegative gamma weights folded into the
    matching-side E second index, like terms combined, deterministic order.

    Negative gamma weights stay explicit: 1/gamma is singular where the
    gradient vanishes and may not be absorbed into a smooth class factor.
    With fold_gamma=False positive weights also stay explicit; the rewrite
    engine works in that form so rules can match weight atoms exactly, and
    classification nets the weights either way.
    """
    bucket: dict[tuple, Fraction] = {}
    for t in e.terms:
        if t.coeff == 0:
            continue
        atoms, sign = _merge_atoms(t.atoms)
        if fold_gamma:
            atoms = _fold_gamma(atoms)
        c = t.coeff * sign
        bucket[atoms] = bucket.get(atoms, Fraction(0)) + c
    terms = tuple(
        KernelTerm(c, a)
        for a, c in sorted(bucket.items(), key=lambda kv: _atoms_sort_key(kv[0]))
        if c != 0
    )
    return KernelExpr(e.n, terms)


def _atoms_sort_key(atoms: tuple):
    return tuple(a.sort_key() for a in atoms)


def _fold_gamma(atoms: tuple) -> tuple:
    """gamma^a with a >= 0 folds into the same-side E second index (gamma obeys
    the xi_1 weight bound); negative weights are kept as explicit prefixes."""
    out = []
    fold = {"Gamma": 0, "GammaStar": 0}
    for a in atoms:
        if a.kind in ("Gamma", "GammaStar") and a.args[0] > 0:
            fold[a.kind] += a.args[0]
        else:
            out.append(a)
    changed = False
    for gkind, ekind in (("Gamma", "E"), ("GammaStar", "Es")):
        w = fold[gkind]
        if w == 0:
            continue
        changed = True
        for i, a in enumerate(out):
            if a.kind == ekind:
                out[i] = Atom(ekind, (a.args[0], a.args[1] + w))
                break
        else:
            out.append(Atom(ekind, (0, w)))
    if changed:
        out.sort(key=Atom.sort_key)
    return tuple(out)


# ---------------------------------------------------------------------------
# Parser.  Grammar:
#   expr   := term ("+" term)*
#   term   := factor ("*" factor)*
#   factor := rational | atom
#   atom   := "R^"int | "Rs^"int | "E["int","int"]" | "Es["int","int"]"
#           | ("Phi"|"PhiBar"|"PhiStar"|"PhiBarStar")"^"int | "P^"int
#           | "r^"int | "rs^"int | ("Gamma"|"GammaStar")"^"int
# Rational factors ("3", "-1", "3/2") extend the atom grammar so that
# canonical printing of merged terms round-trips.  Whitespace-insensitive.

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<name>Rs|R|Es|E|PhiBarStar|PhiBar|PhiStar|Phi|P|rs|r|GammaStar|Gamma)"
    r"|(?P<num>-?\d+(?:/\d+)?)"
    r"|(?P<sym>[\^\[\],*+])"
    r")"
)


def _tokenize(text: str):
    pos = 0
    out = []
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", pos)
        if m.lastgroup == "name" and m.group("name"):
            out.append(("name", m.group("name"), m.start("name")))
        elif m.group("num"):
            out.append(("num", m.group("num"), m.start("num")))
        elif m.group("sym"):
            out.append(("sym", m.group("sym"), m.start("sym")))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, tokens, n):
        self.toks = tokens
        self.i = 0
        self.n = n

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self):
        t = self.peek()
        if t is None:
            raise ParseError("unexpected end of input", -1)
        self.i += 1
        return t

    def expect(self, kind, value=None):
        t = self.next()
        if t[0] != kind or (value is not None and t[1] != value):
            raise ParseError(f"expected {value or kind}, got {t[1]!r}", t[2])
        return t

    def parse_int(self):
        t = self.expect("num")
        if "/" in t[1]:
            raise ParseError("expected an integer", t[2])
        return int(t[1])

    def parse_expr(self) -> KernelExpr:
        terms = [self.parse_term()]
        while self.peek() and self.peek()[1] == "+":
            self.next()
            terms.append(self.parse_term())
        t = self.peek()
        if t is not None:
            raise ParseError(f"trailing input {t[1]!r}", t[2])
        e = KernelExpr(self.n, ())
        for x in terms:
            e = e + x
        return e

    def parse_term(self) -> KernelExpr:
        coeff = Fraction(1)
        atoms: list[Atom] = []
        while True:
            t = self.peek()
            if t is None:
                raise ParseError("empty term", -1)
            if t[0] == "num":
                self.next()
                coeff *= Fraction(t[1])
            elif t[0] == "name":
                atoms.append(self.parse_atom())
            else:
                raise ParseError(f"expected a factor, got {t[1]!r}", t[2])
            nxt = self.peek()
            if nxt and nxt[1] == "*":
                self.next()
                continue
            break
        return KernelExpr(self.n, (KernelTerm(coeff, tuple(atoms)),))

    def parse_atom(self) -> Atom:
        t = self.expect("name")
        name = t[1]
        if name in ("E", "Es"):
            self.expect("sym", "[")
            j = self.parse_int()
            self.expect("sym", ",")
            k = self.parse_int()
            self.expect("sym", "]")
            if j < 0:
                raise SemanticError(
                    f"{name}[{j},{k}]: first index must be nonnegative"
                )
            return Atom(name, (j, k))
        self.expect("sym", "^")
        e = self.parse_int()
        if name in ("R", "Rs") and e < 0:
            raise SemanticError(f"{name}^{e}: R factors need a nonnegative count")
        if name == "P" and e > 0:
            raise SemanticError(f"P^{e}: P admits only nonpositive powers")
        if name in ("r", "rs") and e < 0:
            raise SemanticError(f"{name}^{e}: defining-function powers are >= 0")
        return Atom(name, (e,))


def parse(text: str, n: int) -> KernelExpr:
    """Parse `text` at complex dimension `n` and return the canonical form."""
    if n < 1:
        raise ValueError("n must be a positive integer")
    toks = _tokenize(text)
    if not toks:
        raise ParseError("empty input", 0)
    if len(toks) == 1 and toks[0][0] == "num" and Fraction(toks[0][1]) == 0:
        return KernelExpr(n, ())
    return _Parser(toks, n).parse_expr()


# ---------------------------------------------------------------------------
# Printer


def _format_atom(a: Atom) -> str:
    if a.kind in ("E", "Es"):
        return f"{a.kind}[{a.args[0]},{a.args[1]}]"
    if a.kind in _EXPONENT_KINDS:
        return f"{a.kind}^{a.args[0]}"
    # rewrite-layer atoms; not part of the public grammar
    if a.kind == "LRho":
        idx, bar, star = a.args
        return f"{'LBrho' if bar else 'Lrho'}{'s' if star else ''}[{idx}]"
    if a.kind == "Zdiff":
        return "Zbar" if a.args[0] else "Z"
    if a.kind == "Delta":
        return f"delta[{a.args[0]},{a.args[1]}]"
    if a.kind == "AClass":
        return f"A[{a.args[0]},{a.args[1]}]"
    raise ValueError(f"unknown atom kind {a.kind}")


def format_expr(e: KernelExpr) -> str:
    """Deterministic canonical rendering; parse(format(e)) == normalize(e)
    whenever e contains only grammar atoms."""
    e = normalize(e, fold_gamma=False)
    if not e.terms:
        return "0"
    parts = []
    for t in e.terms:
        factors = []
        if t.coeff != 1 or not t.atoms:
            factors.append(str(t.coeff))
        factors.extend(_format_atom(a) for a in t.atoms)
        parts.append(" * ".join(factors))
    return " + ".join(parts)
