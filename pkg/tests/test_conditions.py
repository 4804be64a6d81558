import math

import pytest
from hypothesis import given, settings, strategies as st

from blowup_lab.conditions import (
    brute_force_growth,
    growth_condition_check,
    growth_pair,
    minimal_growth_exponent,
    no_blowup_classify,
    uniform_lipschitz_bound,
    wellposedness_window,
)
from blowup_lab.piecewise_source import (
    affine_source,
    analytic_source,
    build_alternating,
    build_example_c,
    build_example_d,
    constant_source,
)

F_D = build_example_d(8)


def test_example_d_growth_holds_for_p3():
    rep = growth_condition_check(F_D, 3, 1, n_max=20)
    assert rep.holds and rep.asymptotic_ok and rep.n_checked >= 20


def test_example_d_growth_fails_for_p2_with_sound_counterexample():
    rep = growth_condition_check(F_D, 2, 1)
    assert not rep.holds
    r, s = rep.counterexample["r"], rep.counterexample["s"]
    violated, lhs, rhs = growth_pair(F_D, r, s, 2, 1)
    assert violated and lhs > rhs


def test_collar_slope_beats_bound_at_n3():
    # a_3 ~ phi_2^4 = 65536 against C (1 + 2 phi_3) ~ 513 when p = 2
    a3 = 65040
    assert a3 > 1 * (1 + 2 * (256 + 0.5))


@pytest.mark.parametrize("p", [1.5, 2, 3, 5])
def test_identity_growth_holds(p):
    assert growth_condition_check(affine_source(1, 0), p, 1).holds


def test_minimal_growth_exponents():
    assert minimal_growth_exponent(F_D, 1, [2, 2.5, 3, 3.5]) == 3
    assert minimal_growth_exponent(analytic_source("s_squared"), 1, [1.5, 2, 3]) == 2
    assert minimal_growth_exponent(constant_source(4), 1, [1.5, 2]) == 1.5
    assert minimal_growth_exponent(F_D, 1, [2, 2.5]) is None
    with pytest.raises(ValueError):
        minimal_growth_exponent(F_D, 1, [3, 2])


def test_reduction_agrees_with_brute_force():
    # 2000 x 2000 grid over [0, phi_3]
    ratio3, _, _ = brute_force_growth(F_D, 3, 1, 0, 256, n=2000)
    ratio2, r, s = brute_force_growth(F_D, 2, 1, 0, 256, n=2000)
    assert ratio3 <= 1 and growth_condition_check(F_D, 3, 1).holds
    assert ratio2 > 1 and not growth_condition_check(F_D, 2, 1).holds
    assert growth_pair(F_D, r, s, 2, 1)[0]


@settings(max_examples=25, deadline=None)
@given(st.floats(1.1, 6), st.floats(0.1, 5), st.floats(0, 5))
def test_monotone_in_C(p, C, extra):
    if growth_condition_check(F_D, p, C, n_max=12).holds:
        assert growth_condition_check(F_D, p, C + extra, n_max=12).holds


@settings(max_examples=25, deadline=None)
@given(st.floats(1.1, 6), st.floats(0, 3))
def test_monotone_in_p(p, extra):
    if growth_condition_check(F_D, p, 1, n_max=12).holds:
        assert growth_condition_check(F_D, p + extra, 1, n_max=12).holds


def test_wellposedness_window_examples():
    assert wellposedness_window(3, 2).contains(2)
    assert not wellposedness_window(3, 3).contains(2)
    assert not wellposedness_window(3, 1).contains(1)
    assert [N for N in (1, 2, 3, 4) if wellposedness_window(3, N).contains(2)] == [1, 2]
    with pytest.raises(ValueError):
        wellposedness_window(1, 2)


@given(st.fractions(min_value=1, max_value=10), st.integers(1, 6), st.fractions(min_value=1, max_value=20))
def test_window_definition(p, N, q):
    if p <= 1:
        return
    crit = N * (p - 1) / 2
    expected = (q > crit and q >= 1) or (q == crit and q > 1)
    assert wellposedness_window(p, N).contains(q) == expected


def test_uniform_lipschitz_bound():
    assert uniform_lipschitz_bound(affine_source(1, -1)) == 1
    assert uniform_lipschitz_bound(F_D) is None
    assert uniform_lipschitz_bound(build_example_c()) is None


def test_no_blowup_classify():
    r = no_blowup_classify(analytic_source("s_squared"))
    assert r.finite and math.isclose(r.T, 1.0, abs_tol=1e-9)
    assert no_blowup_classify(F_D).infinite
    assert no_blowup_classify(build_example_c()).infinite


@pytest.mark.parametrize("growth", [2, 10, 1000])
def test_disjoint_support_sum_never_blows_up(growth):
    # h = 1 on alternate unit cells already makes the reciprocal integral diverge
    assert no_blowup_classify(build_alternating(8, growth)).infinite
