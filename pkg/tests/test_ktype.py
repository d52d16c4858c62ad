import pytest
from fractions import Fraction
from math import inf

from hypothesis import given, settings, strategies as st

from kernelcalc import ktype
from kernelcalc.kexpr import parse, normalize
from kernelcalc.ktype import (
    ClassificationError,
    DoubleType,
    IsotropicKernel,
    classify,
    integrability_threshold,
    mapping,
    z_chain,
)


def _dt(text, n=2):
    return classify(parse(text, n))


def test_adjoint_kernel_term_type():
    ct = _dt("R^1 * E[1,0] * PhiBar^-1 * P^-1")
    assert (ct.overall.tau, ct.overall.s) == (1, 2)


def test_error_term_smooth_type():
    ct = _dt("E[3,0] * Phi^-1 * P^-2")
    assert ct.overall.s == 2
    assert ct.overall.tau == 0


def test_bounded_class_type():
    ct = _dt("E[0,0]")
    assert (ct.overall.tau, ct.overall.s) == (2, 4)


def test_singular_prefix_reported():
    ct = _dt("Gamma^-1 * E[2,0] * Phi^-1 * P^-2")
    assert ct.prefixes == {(-1, 0): DoubleType(-1, 1)}


def test_min_rule_over_terms():
    ct = _dt("R^1*E[1,0]*PhiBar^-1*P^-1 + E[3,0]*Phi^-1*P^-2")
    assert (ct.overall.tau, ct.overall.s) == (0, 2)


def test_empty_expression_rejected():
    with pytest.raises(ClassificationError):
        classify(parse("0", 2))


def test_positive_phi_sum_rejected():
    with pytest.raises(ClassificationError):
        classify(parse("Phi^-1", 2) * parse("PhiBar^-1", 2) * _pos_phi())


def _pos_phi():
    from kernelcalc.kexpr import KernelExpr, KernelTerm, Atom
    from fractions import Fraction

    return KernelExpr(2, (KernelTerm(Fraction(1), (Atom("PhiStar", (3,)),)),))


def test_tau_never_exceeds_s():
    with pytest.raises(ClassificationError):
        DoubleType(3, 1)


def test_mapping_examples():
    assert mapping(1, 2, 2) == Fraction(3)
    assert mapping(0, 2, 5) == Fraction(5)
    assert mapping(1, 2, 1) == Fraction(6, 5)
    assert mapping(2 * 2 + 2, 2, 1) == inf


def test_mapping_monotone_in_j():
    vals = [mapping(j, 2, 2) for j in range(0, 6)]
    numeric = [float(v) if v != inf else inf for v in vals]
    assert numeric == sorted(numeric)


def test_integrability_threshold_examples():
    assert integrability_threshold(1, 2) == Fraction(6, 5)
    assert integrability_threshold(0, 2) == 1
    assert integrability_threshold(2, 2) == Fraction(3, 2)
    with pytest.raises(ValueError):
        integrability_threshold(6, 2)


def test_z_chain_table():
    for n in range(1, 7):
        k, rule = z_chain(n, 2)
        assert k == n + 2
        assert rule == "admissible_type1"


def test_z_chain_examples():
    assert z_chain(3, 2)[0] == 5
    assert z_chain(2, inf)[0] == 1


def test_isotropic_kernel():
    k = IsotropicKernel(m=1, k=1, n=2)  # 1 - 2 = -1 >= 1 - 4
    assert k.mapping(2) == Fraction(4)  # 1/s > 1/2 - 1/4
    with pytest.raises(ValueError):
        IsotropicKernel(m=0, k=2, n=2)


def test_gamma_multiplication_never_decreases_tau():
    base = parse("R^1 * E[1,0] * PhiBar^-1 * P^-1", 2)
    t0 = classify(base).overall
    for a in range(1, 4):
        e = normalize(parse(f"Gamma^{a}", 2) * base)
        t1 = classify(e).overall
        assert t1.tau >= t0.tau
        assert t1.s == t0.s  # s is blind to the weight index


def test_s_strictly_increasing_in_first_index():
    prev = None
    for j in range(0, 5):
        s_val = classify(parse(f"E[{j},0] * Phi^-1 * P^-2", 2)).overall.s
        if prev is not None:
            assert s_val == prev + 1
        prev = s_val


_CLASSIFIABLE = st.lists(
    st.one_of(
        st.tuples(st.integers(0, 3), st.integers(0, 2)).map(
            lambda jk: f"E[{jk[0]},{jk[1]}]"
        ),
        st.tuples(st.integers(0, 3), st.integers(0, 2)).map(
            lambda jk: f"Es[{jk[0]},{jk[1]}]"
        ),
        st.integers(1, 2).map(lambda k: f"R^{k}"),
        st.sampled_from(["Phi", "PhiBar", "PhiStar", "PhiBarStar"]).flatmap(
            lambda k: st.integers(-2, -1).map(lambda e: f"{k}^{e}")
        ),
        st.integers(-3, -1).map(lambda e: f"P^{e}"),
        st.integers(1, 2).map(lambda e: f"Gamma^{e}"),
        st.integers(-2, -1).map(lambda e: f"Gamma^{e}"),
    ),
    min_size=1,
    max_size=5,
).map(" * ".join)


@settings(max_examples=500, deadline=None)
@given(st.lists(_CLASSIFIABLE, min_size=1, max_size=3).map(" + ".join))
def test_normalize_preserves_type(text):
    e = parse(text, 2)
    before = classify(e)
    after = classify(normalize(e))
    assert before.overall == after.overall
    assert before.prefixes == after.prefixes
