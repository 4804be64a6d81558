import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from blowup_lab.errors import ConfigError
from blowup_lab.logdomain import LogReal, PhiSequence
from blowup_lab.piecewise_source import affine_source, analytic_source, build_example_d, named_source
from blowup_lab.toy_pde import (
    Block,
    BlockFunction,
    blowup_onset_measure,
    constant_block,
    evolve_block,
    example_d_psi,
    instantaneous_blowup_certificate,
    lipschitz_bound_check,
    lp_norm_block,
    powerlaw_norm_example_c,
    random_block_function,
    recompute_term,
    verify_divergence,
    _envelope_ratio,
)

F_D = build_example_d(8)
PSI = example_d_psi(8)
S2 = analytic_source("s_squared")


def tower_index(value) -> int:
    # phi_n = 2**(2**n) has 2**n + 1 bits
    return (int(value).bit_length() - 1).bit_length() - 1


def test_tower_blocks_tile():
    blocks = sorted(PSI.blocks, key=lambda b: b.lo)
    assert all(a.hi == b.lo for a, b in zip(blocks, blocks[1:]))
    assert blocks[-1].hi == Fraction(1, 16)
    for n in range(9):
        p = PhiSequence(n).exact
        assert Fraction(1, PhiSequence(n + 1).exact ** 4) == Fraction(1, p**8)


def test_block_function_validation():
    with pytest.raises(ConfigError):
        BlockFunction((Block(0, Fraction(1, 2), 1), Block(Fraction(1, 4), 1, 1)))
    with pytest.raises(ConfigError):
        BlockFunction((Block(0, 1, -1),))


def test_json_round_trip():
    for psi in (PSI, constant_block(3), random_block_function(np.random.default_rng(3))):
        back = BlockFunction.from_dict(psi.to_dict())
        assert back.blocks == psi.blocks and back.generator == psi.generator


def test_evolve_identity_at_zero():
    ev = evolve_block(PSI, F_D, 0)
    assert ev.values == tuple(float(b.value) for b in PSI.blocks)
    assert not any(ev.blown)


def test_evolve_square_source_closed_form():
    ev = evolve_block(constant_block(2), S2, 0.25)
    assert math.isclose(ev.values[0], 4.0, rel_tol=1e-9)


@pytest.mark.parametrize("t", [0.05, 0.25, 0.5])
def test_evolve_tower_within_envelope(t):
    ev = evolve_block(PSI, F_D, t)
    assert not any(ev.blown)
    for b, v in zip(PSI.blocks, ev.values):
        p = PhiSequence(tower_index(b.value)).exact
        assert p + t * (p * p - p) / 2 <= v * (1 + 1e-12)
        assert v <= (p + t * (p * p - p)) * (1 + 1e-12)


def test_evolve_preserves_intervals():
    ev = evolve_block(PSI, F_D, 0.3)
    assert ev.intervals == tuple((b.lo, b.hi) for b in PSI.blocks)


def test_lp_norm_four_terms_against_rational_oracle():
    oracle = sum(Fraction(1, PhiSequence(n).exact ** 2) - Fraction(1, PhiSequence(n).exact ** 6) for n in range(4))
    v = lp_norm_block(PSI, 2, 4)
    assert v.verdict == "convergent"
    assert abs(v.sum - float(oracle)) <= 1e-12
    assert abs(v.sum - 0.300553) < 1e-6


def test_l4_divergent():
    v = lp_norm_block(PSI, 4, 20)
    assert v.verdict == "divergent" and v.n0 == 0 and v.c >= 0.5
    for n in range(20):
        assert math.isclose(v.terms[n], 1 - PhiSequence(n).float_value ** -4 if n < 10 else 1.0, rel_tol=1e-15)
    assert verify_divergence(v, 20)


def test_single_block_norm():
    v = lp_norm_block(constant_block(3, 0, 1), 2, 1)
    assert v.verdict == "convergent" and v.sum == 9.0


def test_lp_norm_rejects_small_p():
    with pytest.raises(ValueError):
        lp_norm_block(PSI, 0.5, 3)


@given(st.integers(1, 40))
def test_convergent_sum_monotone_in_terms(k):
    a, b = lp_norm_block(PSI, 2, k), lp_norm_block(PSI, 2, k + 1)
    assert b.sum >= a.sum
    # the tail bound covers what the longer sum added
    assert b.sum - a.sum <= a.err


@pytest.mark.parametrize("t", [0.01, 0.1, 0.5])
def test_instantaneous_certificate(t):
    v = instantaneous_blowup_certificate(F_D, PSI, t)
    assert v.verdict == "divergent"
    assert v.n0 == 1 and math.isclose(v.c, t * t / 8, rel_tol=1e-15)
    assert verify_divergence(v, 20)


def test_certificate_asymptotic_value():
    t = 0.1
    v = instantaneous_blowup_certificate(F_D, PSI, t, n_probe=21)
    assert math.isclose(v.terms[20], t * t / 4, rel_tol=1e-12)


def test_envelope_ratio_increases_to_one():
    ratios = [_envelope_ratio(n) for n in range(21)]
    assert all(a < b for a, b in zip(ratios[:6], ratios[1:7]))
    assert all(a <= b for a, b in zip(ratios, ratios[1:]))
    assert ratios[0] < LogReal.from_value(0.5) <= ratios[1]
    assert math.isclose(ratios[20].to_float(), 1.0, rel_tol=1e-15)


def test_envelope_ratio_matches_exact_rational():
    for n in range(1, 6):
        p = Fraction(PhiSequence(n).exact)
        exact = (p * p - p) ** 2 * (p**8 - p**4) / p**12
        assert math.isclose(_envelope_ratio(n).to_float(), float(exact), rel_tol=1e-13)


def test_certificate_terms_bound_true_evolved_terms():
    t = 0.3
    v = instantaneous_blowup_certificate(F_D, PSI, t)
    ev = evolve_block(PSI, F_D, t)
    true = {tower_index(b.value): LogReal.from_value(val) ** 2 * LogReal.from_value(b.measure)
            for b, val in zip(PSI.blocks, ev.values)}
    for n, bound in enumerate(v.terms[:9]):
        assert true[n] >= LogReal.from_value(bound * (1 - 1e-12))


def test_uniformly_lipschitz_source_gives_convergent_norm():
    v = instantaneous_blowup_certificate(affine_source(1, 0), PSI, 0.7)
    assert v.verdict == "convergent"


def test_certificate_at_zero_is_psi_norm():
    assert instantaneous_blowup_certificate(F_D, PSI, 0).verdict == "convergent"


def test_recompute_needs_rule():
    v = lp_norm_block(constant_block(2), 2)
    with pytest.raises(ValueError):
        recompute_term(v, 0)


def test_onset_measure_examples():
    r = blowup_onset_measure(S2, PSI, 1 / 16)
    assert r.level == pytest.approx(16) and r.exact_measure == "1/65536"
    assert blowup_onset_measure(S2, constant_block(1), 0.5).measure == 0
    assert blowup_onset_measure(S2, PSI, 0.5).exact_measure == "1/16"
    assert blowup_onset_measure(S2, PSI, 3.0).exact_measure == "1/16"


def test_onset_measure_for_global_source():
    r = blowup_onset_measure(F_D, PSI, 0.5)
    assert r.measure == 0 and not r.pointwise_blowup


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-9, 2.0))
def test_onset_measure_positive_for_unbounded_data(t):
    r = blowup_onset_measure(S2, PSI, t)
    assert r.measure > 0
    # blocks with phi_n >= 1/t fill (0, phi_k^-4)
    k = next(n for n in range(64) if PhiSequence(n).exact >= r.level * (1 - 1e-12))
    assert Fraction(r.exact_measure) == Fraction(1, PhiSequence(k).exact ** 4)


def test_powerlaw_norm():
    assert powerlaw_norm_example_c(0.25, 2, 0).value == pytest.approx(2.0, rel=1e-15)
    assert powerlaw_norm_example_c(0.25, 2, math.log(2)).blown_up
    assert powerlaw_norm_example_c(0.25, 2, math.log(1.5)).value == pytest.approx(4.0, rel=1e-14)
    with pytest.raises(ValueError):
        powerlaw_norm_example_c(0.5, 2, 0)


@pytest.mark.parametrize("t", [0.0, 0.2, 0.4, 0.6])
def test_powerlaw_norm_against_quadrature(t):
    e = 0.5 * math.exp(t)
    q, _ = quad(lambda x: x ** (-e), 0, 1, limit=200)
    assert math.isclose(powerlaw_norm_example_c(0.25, 2, t).value, q, rel_tol=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 1.0]), st.sampled_from([1, 2, 4]))
def test_gronwall_bound(seed, t, p):
    psi = random_block_function(np.random.default_rng(seed))
    assert lipschitz_bound_check(named_source("s_minus_1"), psi, t, p).holds


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 0.5))
def test_domination_preserved(seed, t):
    rng = np.random.default_rng(seed)
    lo = random_block_function(rng, max_value=50)
    hi = BlockFunction(tuple(Block(b.lo, b.hi, b.value + Fraction(int(rng.integers(0, 40)))) for b in lo.blocks))
    a, b = evolve_block(lo, F_D, t), evolve_block(hi, F_D, t)
    assert all(x <= y * (1 + 1e-12) for x, y in zip(a.values, b.values))
    for p in (1, 2, 3):
        assert lp_norm_block(lo, p).sum <= lp_norm_block(hi, p).sum
        assert a.lp_power(p) <= b.lp_power(p) * (1 + 1e-12)
