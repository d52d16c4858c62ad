import pytest
from fractions import Fraction
from hypothesis import given, settings, strategies as st

from kernelcalc import kexpr
from kernelcalc.kexpr import (
    KernelExpr,
    ParseError,
    SemanticError,
    format_expr,
    normalize,
    parse,
)


def test_parse_single_term():
    e = parse("R^1 * E[1,0] * PhiBar^-1 * P^-1", 2)
    assert len(e.terms) == 1
    assert len(e.terms[0].atoms) == 4


def test_parse_two_term_sum():
    e = parse("E[3,0]*Phi^-1*P^-2 + Gamma^-1 * E[2,0]*Phi^-1*P^-2", 2)
    assert len(e.terms) == 2


def test_positive_p_power_rejected():
    with pytest.raises(SemanticError):
        parse("P^1", 2)


def test_negative_r_power_rejected():
    with pytest.raises(SemanticError):
        parse("r^-1", 2)


def test_syntax_error_has_offset():
    with pytest.raises(ParseError) as exc:
        parse("R^1 * ?", 2)
    assert "offset" in str(exc.value)


def test_normalize_folds_nonnegative_gamma():
    assert normalize(parse("Gamma^2 * E[1,0]", 2)) == parse("E[1,2]", 2)


def test_normalize_merges_e_factors():
    assert normalize(parse("E[1,0]*E[2,1]", 2)) == parse("E[3,1]", 2)


def test_negative_gamma_weight_kept_explicit():
    e = parse("Gamma^-1 * E[0,0]", 2)
    assert normalize(e) == e
    assert format_expr(e) == "Gamma^-1 * E[0,0]"


def test_gamma_folds_into_matching_side():
    e = normalize(parse("GammaStar^1 * E[1,0] * Es[2,0]", 2))
    assert e == parse("E[1,0] * Es[2,1]", 2)


def test_format_canonical_single_term():
    e = parse("PhiBar^-1 * R^1 * P^-1 * E[1,0]", 2)
    assert format_expr(e) == "R^1 * E[1,0] * PhiBar^-1 * P^-1"


def test_format_zero():
    assert format_expr(KernelExpr(2, ())) == "0"
    assert parse("0", 2).is_zero()


def test_sum_prints_in_canonical_order():
    a = "E[3,0] * Phi^-1 * P^-2 + Gamma^-1 * E[2,0] * Phi^-1 * P^-2"
    b = "Gamma^-1 * E[2,0]*Phi^-1*P^-2 + E[3,0]*Phi^-1*P^-2"
    assert format_expr(parse(a, 2)) == format_expr(parse(b, 2))


def test_like_terms_combine_and_cancel():
    e = parse("E[1,0] + E[1,0]", 2)
    assert e.terms[0].coeff == Fraction(2)
    z = parse("E[1,0]", 2) - parse("E[1,0]", 2)
    assert z.is_zero()


# ---------------------------------------------------------------------------
# randomized properties

_atom_strings = st.one_of(
    st.integers(0, 3).map(lambda k: f"R^{k + 1}"),
    st.integers(0, 3).map(lambda k: f"Rs^{k + 1}"),
    st.tuples(st.integers(0, 4), st.integers(-2, 3)).map(
        lambda jk: f"E[{jk[0]},{jk[1]}]"
    ),
    st.tuples(st.integers(0, 4), st.integers(-2, 3)).map(
        lambda jk: f"Es[{jk[0]},{jk[1]}]"
    ),
    st.sampled_from(["Phi", "PhiBar", "PhiStar", "PhiBarStar"]).flatmap(
        lambda k: st.integers(-3, -1).map(lambda e: f"{k}^{e}")
    ),
    st.integers(-4, -1).map(lambda e: f"P^{e}"),
    st.integers(1, 2).map(lambda e: f"r^{e}"),
    st.integers(1, 2).map(lambda e: f"rs^{e}"),
    st.integers(-2, 2).filter(lambda e: e != 0).map(lambda e: f"Gamma^{e}"),
    st.integers(-2, 2).filter(lambda e: e != 0).map(lambda e: f"GammaStar^{e}"),
)

_term_strings = st.lists(_atom_strings, min_size=1, max_size=5).map(" * ".join)
_expr_strings = st.lists(_term_strings, min_size=1, max_size=4).map(" + ".join)


@settings(max_examples=300, deadline=None)
@given(_expr_strings)
def test_roundtrip_through_parse(text):
    e = normalize(parse(text, 2))
    assert parse(format_expr(e), 2) == e


@settings(max_examples=300, deadline=None)
@given(_expr_strings)
def test_normalize_idempotent(text):
    e = parse(text, 2)
    assert normalize(normalize(e)) == normalize(e)


@settings(max_examples=150, deadline=None)
@given(st.lists(_term_strings, min_size=2, max_size=4), st.randoms())
def test_normalize_commutes_with_reordering(terms, rnd):
    shuffled = list(terms)
    rnd.shuffle(shuffled)
    assert normalize(parse(" + ".join(terms), 2)) == normalize(
        parse(" + ".join(shuffled), 2)
    )
