import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from blowup_lab.errors import CoverageError, NoBlowupError
from blowup_lab.kinetics import (
    blowup_time,
    comparison_envelope,
    example_d_envelope,
    flow,
    flow_array,
    invert_blowup_time,
)
from blowup_lab.logdomain import LogReal, PhiSequence
from blowup_lab.piecewise_source import (
    Constant,
    affine_source,
    analytic_source,
    build_example_c,
    build_example_d,
    constant_source,
    named_source,
)

F_D = build_example_d(8)
F_C = build_example_c()
S2 = analytic_source("s_squared")
EXP = analytic_source("exp")

# sources whose flows stay inside coverage on the sampled ranges
REGISTRY = {
    "example-d": F_D,
    "example-c": F_C,
    "identity": named_source("identity"),
    "s_minus_1": named_source("s_minus_1"),
    "one": named_source("one"),
    "zero": named_source("zero"),
}


def test_example_c_closed_forms():
    assert math.isclose(flow(F_C, 2, math.log(2)).value, 4.0, rel_tol=1e-9)
    assert flow(F_C, 1, 0.7).value == 1.0
    assert abs(flow(F_C, 0.5, math.log(2)).value) < 1e-15


@pytest.mark.parametrize("z0", [2.0, 10.0])
@pytest.mark.parametrize("t", [0.1, 0.5])
def test_example_c_power_flow(z0, t):
    assert math.isclose(flow(F_C, z0, t).value, z0 ** math.exp(t), rel_tol=1e-8)


def test_example_d_from_phi1():
    v = flow(F_D, 4, 0.5).value
    assert 7 <= v <= 10


def test_flow_constant_and_affine_closed_forms():
    assert flow(constant_source(3), 1, 2).value == 7.0
    v = flow(affine_source(2, 1), 0, 0.5).value  # (z + 1/2) e^{2t} - 1/2
    assert math.isclose(v, 0.5 * math.e - 0.5, rel_tol=1e-14)


def test_flow_blowup_reported_with_time():
    r = flow(S2, 2, 1)
    assert not r.alive and math.isclose(r.blowup_time, 0.5, rel_tol=1e-9)
    assert r.blowup_time <= r.elapsed


def test_flow_rejects_bad_input():
    with pytest.raises(ValueError):
        flow(F_D, 3, -1)
    with pytest.raises(CoverageError):
        flow(S2, -1, 0.1)


def test_blowup_time_examples():
    r = blowup_time(S2, 1)
    assert r.finite and abs(r.T - 1.0) <= 1e-9 and r.err >= 0
    assert blowup_time(F_C, math.e).infinite
    d = blowup_time(F_D, 2)
    assert d.infinite and d.piece_bound >= 11 / 12


def test_blowup_time_infinite_evidence_is_monotone():
    d = blowup_time(F_D, 2)
    sums = d.partial_sums
    # collar terms are positive but can vanish against the running sum in floating point
    assert all(b >= a for a, b in zip(sums, sums[1:]))
    assert all(v > 0 for _, v in d.contributions)
    plateaus = [v for j, (_, v) in zip(d.piece_indices, d.contributions)
                if j > 0 and isinstance(F_D.pieces[j].kind, Constant)]
    assert len(plateaus) == 8 and min(plateaus) >= 11 / 12 - 1e-15


@pytest.mark.parametrize("f,eps,z", [(S2, 0.5, 2.0), (S2, 0.1, 10.0), (EXP, math.exp(-3), 3.0)])
def test_invert_blowup_time(f, eps, z):
    assert math.isclose(invert_blowup_time(f, eps), z, rel_tol=1e-9)


def test_invert_rejects_global_sources():
    with pytest.raises(NoBlowupError):
        invert_blowup_time(F_D, 0.1)


@pytest.mark.parametrize("delta", [0.1, 0.01])
def test_finite_blowup_time_consistent_with_flow(delta):
    T = blowup_time(S2, 2).T
    r = flow(S2, 2, T * (1 - delta))
    assert r.alive and math.isclose(r.value, 2 / delta, rel_tol=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(REGISTRY)), st.floats(0.0, 30.0), st.floats(0, 0.2), st.floats(0, 0.2))
def test_semigroup(name, z0, s, t):
    f = REGISTRY[name]
    a = flow(f, z0, s + t)
    b = flow(f, z0, s)
    assume(a.alive and b.alive)
    c = flow(f, b.value, t)
    assert math.isclose(a.value, c.value, rel_tol=1e-8, abs_tol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(REGISTRY)), st.floats(0.0, 30.0), st.floats(0.0, 30.0), st.floats(0, 0.3))
def test_monotone_in_data(name, x, y, t):
    f = REGISTRY[name]
    lo, hi = sorted((x, y))
    a, b = flow(f, lo, t), flow(f, hi, t)
    assert a.value <= b.value * (1 + 1e-12) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["example-d", "s_squared", "exp", "identity", "example-c"]), st.floats(1.0, 50.0), st.floats(1.0, 50.0))
def test_blowup_time_decreasing(name, a, b):
    f = {"example-d": F_D, "example-c": F_C}.get(name) or named_source(name)
    lo, hi = sorted((a, b))
    ta, tb = blowup_time(f, lo), blowup_time(f, hi)
    if ta.finite:
        assert ta.T >= tb.T
        if hi > lo * (1 + 1e-9):
            assert ta.T > tb.T


@pytest.mark.parametrize("n", range(1, 9))
@pytest.mark.parametrize("t", [0.0, 0.1, 0.25, 0.5])
def test_example_d_envelope(n, t):
    lower, upper = example_d_envelope(n, Fraction(t))
    v = flow(F_D, PhiSequence(n).exact, t).value
    if isinstance(lower, LogReal):
        assert LogReal.from_value(v * (1 + 1e-12)) >= lower and LogReal.from_value(v * (1 - 1e-12)) <= upper
    else:
        assert float(lower) * (1 - 1e-12) <= v <= float(upper) * (1 + 1e-12)


def test_comparison_envelope_examples():
    rep = comparison_envelope(named_source("identity"), 1, 2, 3, [0, 1])
    assert rep.complete and rep.max_violation == 0
    assert np.allclose(rep.upper, [3, 3 * math.e])
    rep = comparison_envelope(F_C, 0.5, 1, 2, [0, math.log(2)])
    assert rep.max_violation == 0 and math.isclose(rep.upper[-1], 4, rel_tol=1e-9)
    rep = comparison_envelope(F_D, 5, 5, 5, [0.1, 0.3])
    assert rep.max_violation == 0.0 and rep.lower == rep.middle == rep.upper


def test_comparison_envelope_partial_on_blowup():
    rep = comparison_envelope(S2, 1, 2, 4, [0.1, 0.2, 0.3])
    assert not rep.complete and math.isclose(rep.blown_at, 0.25, rel_tol=1e-9)
    assert rep.times == (0.1, 0.2)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.0, 200.0), min_size=1, max_size=20), st.floats(0, 0.4))
def test_flow_array_matches_scalar(zs, t):
    got = flow_array(F_D, np.array(zs), t)
    want = [flow(F_D, z, t).value for z in zs]
    assert np.allclose(got, want, rtol=1e-12, atol=0)
