import pytest

from kernelcalc import krewrite as kr
from kernelcalc.kexpr import format_expr, normalize, parse
from kernelcalc.krewrite import (
    ReplayError,
    apply_field,
    epsilon_sign,
    parse_field,
    parse_script_expr,
    replay,
    rule_base,
    rule_by_id,
    star,
)

ALL_SCRIPTS = [
    "proplnp_i", "proplnp_ii", "2p-l2", "mlemma_i", "mlemma_ii",
    "derM_i", "derM_ii", "derM_iii", "derM_iv",
    "cnclprop_case1", "cnclprop_case2", "cnclprop_case3", "cnclprop_case4",
    "thrmT", "thrmP",
]


def test_rule_base_lookup():
    assert rule_by_id("xpe").id == "xpe"
    assert rule_by_id("phisymm").provenance
    with pytest.raises(KeyError):
        rule_by_id("no_such_rule")


def test_rule_base_is_versioned_list():
    ids = [r.id for r in rule_base()]
    assert len(ids) == len(set(ids))
    for rid in ("r_over_gamma", "gamma_diff", "coor_to_phibar",
                "znorm_to_phiphibar", "star_lrho_pair"):
        assert rid in ids


def test_apply_field_power_rule_on_gauge():
    # X P^-1 = -P^-2 (E10 + gamma E00 + gamma* E00)
    e = parse_script_expr("P^-1", 2)
    out = apply_field(parse_field("X"), e)
    want = parse_script_expr(
        "-E[1,0]*P^-2 - Gamma^1*E[0,0]*P^-2 - GammaStar^1*E[0,0]*P^-2", 2
    )
    assert out == want


def test_apply_field_on_class_factor():
    # X E[1,0] = E[0,0] + E[1,-1]
    out = apply_field(parse_field("X"), parse_script_expr("E[1,0]", 2))
    assert out == parse_script_expr("E[0,0] + E[1,-1]", 2)


def test_apply_field_tangential_on_kernel_shape():
    # L_m of 1/(phibar P^(n-1)) has the displayed leading term
    n = 3
    e = parse_script_expr("PhiBar^-1 * P^-(n-1)", n)
    out = apply_field(parse_field("L_m"), e)
    lead = parse_script_expr("-(n-1)*Lrho[m]*PhiBar^-1*P^-n", n)
    leftover = out - lead
    # remainder must classify with a 1/gamma charge at class (-1,1) or better
    from kernelcalc.ktype import canonical_buckets

    buckets = canonical_buckets(leftover)
    for (a, b), dt in buckets.items():
        assert a >= -1 and b >= 0
        assert dt.tau >= -1 and dt.s >= 1


def test_underived_atom_reported():
    e = parse_script_expr("A[-1,1]", 2)
    with pytest.raises(ReplayError):
        apply_field(parse_field("L_m"), e)


def test_apply_field_is_leibniz():
    a = parse_script_expr("E[2,1]", 2)
    b = parse_script_expr("P^-1", 2)
    f = parse_field("X")
    lhs = apply_field(f, a * b)
    rhs = apply_field(f, a) * b + a * apply_field(f, b)
    assert lhs == rhs


def test_star_involution_and_swap():
    e = parse_script_expr("Gamma^-2 * E[1,0] * PhiBar^-1 * rs^1", 2)
    assert star(star(e)) == e
    s = star(e)
    kinds = {a.kind for t in s.terms for a in t.atoms}
    assert kinds == {"GammaStar", "Es", "PhiBarStar", "r"}


def test_star_flips_coordinate_difference():
    e = parse_script_expr("Z", 2)
    assert star(e) == parse_script_expr("-Zbar", 2)
    assert star(star(e)) == e


def test_epsilon_sign_examples():
    assert epsilon_sign([2], [1], [1, 2]) == -1
    assert epsilon_sign([1], [1], [1, 1]) == 0
    assert epsilon_sign([1], [2, 3], [1, 2, 3]) == 1
    assert epsilon_sign([2], [1], [1, 3]) == 0


def test_epsilon_sign_antisymmetry():
    base = epsilon_sign([1, 2], [3], [1, 2, 3])
    swapped = epsilon_sign([2, 1], [3], [1, 2, 3])
    assert base == -swapped != 0


@pytest.mark.parametrize("name", ALL_SCRIPTS)
def test_replay_certifies(name):
    d = replay(name)
    assert d.certified, "\n".join(d.trace)


def test_replay_unknown_script():
    with pytest.raises(ReplayError):
        replay("nonexistent_script")


def test_replay_deterministic():
    a = replay("derM_ii")
    b = replay("derM_ii")
    assert a.trace == b.trace
    assert a.residual == b.residual


def test_derM_iv_leading_term_shape():
    d = replay("derM_iv")
    want = parse_script_expr(
        "4*n*(n-1)*Gamma^-1*GammaStar^-1*PhiStar^1*LBrho[j]*P^-(n+1)", d.n
    )
    assert d.leading == normalize(want, fold_gamma=False)


def test_cnclprop_cases_pin_the_stated_classes():
    from kernelcalc.ktype import DoubleType

    for case in ("cnclprop_case1", "cnclprop_case2", "cnclprop_case3",
                 "cnclprop_case4"):
        d = replay(case)
        assert d.computed == {
            (-1, 0): DoubleType(-1, 1),
            (0, -1): DoubleType(-1, 1),
        }


def test_replay_runtime_bounded():
    import time

    t0 = time.time()
    for name in ALL_SCRIPTS:
        replay(name)
    assert time.time() - t0 < 10.0
