import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from blowup_lab.errors import ConfigError, CoverageError, PositivityError
from blowup_lab.logdomain import LogReal, PhiSequence
from blowup_lab.piecewise_source import (
    ANALYTIC,
    Affine,
    Constant,
    ExampleDGenerator,
    Piece,
    PiecewiseSource,
    affine_source,
    analytic_source,
    build_alternating,
    build_example_c,
    build_example_d,
    check_tiling,
    constant_source,
    continuity_residuals,
    evaluate_array,
    lipschitz_on,
    named_source,
    reciprocal_integral,
    reciprocal_integral_with_error,
    NAMED_SOURCES,
)

F_D = build_example_d(8)
F_C = build_example_c()


def test_example_d_first_region():
    assert F_D(3.0) == 2.0


def test_example_c_values():
    assert F_C(1.0) == 0.0
    assert math.isclose(F_C(math.e), math.e, rel_tol=1e-15)
    assert math.isclose(F_C(math.e**2), 2 * math.e**2, rel_tol=1e-14)


def test_example_c_derivative_matches_at_junction():
    d = ANALYTIC["s_ln_s"].derivative(1.0)
    left = F_C.pieces[0].kind
    assert isinstance(left, Affine) and left.slope == 1 and d == 1.0


def test_collar_coefficients():
    # a_n = phi^4 - 2 phi^2 + phi and b_n = (-2 phi^6 + 5 phi^4 - 2 phi^3 - phi)/2 at phi = phi_{n-1}
    for n, (a, b) in {1: (10, -33), 2: (228, -3522)}.items():
        assert ExampleDGenerator.slope_exact(n) == a
        assert ExampleDGenerator.intercept_exact(n) == b
    assert ExampleDGenerator.slope_exact(3) == 65040


def test_collar_value_at_phi2_is_midpoint():
    assert F_D.exact(16) == Fraction(12 + 240, 2) == 126


@pytest.mark.parametrize("n", range(1, 9))
def test_example_d_continuity_exact(n):
    g = ExampleDGenerator(8)
    half = Fraction(1, 2)
    p, q, prev = (PhiSequence(k).exact for k in (n, n + 1, n - 1))
    a, b = g.slope_exact(n), g.intercept_exact(n)
    assert a * (p - half) + b == p - prev
    assert a * (p + half) + b == q - p


def test_all_breakpoints_continuous():
    assert all(r == 0 for r in continuity_residuals(F_D))
    assert all(F_D.is_continuous_at(i) for i in range(len(F_D.pieces) - 1))


def test_lipschitz_on_collar():
    assert lipschitz_on(F_D, Fraction(31, 2), Fraction(33, 2)) == 228


def test_lipschitz_simple_cases():
    assert lipschitz_on(F_D, 5, 10) == 0
    assert lipschitz_on(affine_source(1, 0), -3, 7) == 1
    jump = PiecewiseSource((Piece(0, 1, Constant(1)), Piece(1, 2, Constant(3))))
    assert lipschitz_on(jump, 0, 2) == math.inf


@given(st.floats(0, 300), st.floats(0, 300), st.floats(0, 50))
def test_lipschitz_monotone_under_enlargement(a, b, grow):
    lo, hi = sorted((a, b))
    assume(hi - lo > 1e-6)
    assert lipschitz_on(F_D, max(0.0, lo - grow), hi + grow) >= lipschitz_on(F_D, lo, hi)


def test_reciprocal_integrals():
    assert math.isclose(reciprocal_integral(analytic_source("s_squared"), 1, 10), 0.9, abs_tol=1e-10)
    assert reciprocal_integral(F_D, Fraction(9, 2), Fraction(31, 2)) == pytest.approx(11 / 12, abs=1e-15)
    assert math.isclose(reciprocal_integral(F_C, math.e, math.e**math.e), 1.0, abs_tol=1e-10)


def test_reciprocal_integral_affine_closed_form():
    f = affine_source(2, 1)
    assert math.isclose(reciprocal_integral(f, 0, 3), math.log(7) / 2, rel_tol=1e-14)


def test_reciprocal_integral_positivity():
    with pytest.raises(PositivityError):
        reciprocal_integral(affine_source(1, -1), 0, 2)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["example-d", "s_squared", "exp", "example-c"]), st.floats(1.2, 60), st.floats(0.01, 0.98))
def test_reciprocal_integral_additive(name, c, frac):
    f = F_D if name == "example-d" else named_source(name)
    a, b = 1.1, 1.1 + frac * (c - 1.1)
    assume(b - a > 1e-6 and c - b > 1e-6)
    tol = 1e-10
    whole = reciprocal_integral(f, a, c, tol)
    assert abs(whole - reciprocal_integral(f, a, b, tol) - reciprocal_integral(f, b, c, tol)) <= 2 * tol


def test_tiling_and_tail_rules():
    for name in NAMED_SOURCES:
        assert check_tiling(named_source(name))
    assert F_D.tail == "truncate"
    with pytest.raises(CoverageError):
        F_D(float(F_D.hi) * 2)
    assert constant_source(3)(1e300) == 3.0


def test_gap_rejected():
    with pytest.raises(ConfigError):
        PiecewiseSource((Piece(0, 1, Constant(1)), Piece(2, 3, Constant(1))))
    with pytest.raises(ConfigError):
        Piece(1, 1, Constant(1))


def test_breakpoints_are_right_continuous():
    # value at phi_1 - 1/2 comes from the collar, whose value there matches the left constant
    assert F_D.locate(Fraction(7, 2)) == 1
    jump = PiecewiseSource((Piece(0, 1, Constant(1)), Piece(1, 2, Constant(3))), tail="truncate")
    assert jump(1) == 3.0


def test_log_domain_guard():
    with pytest.raises(ConfigError):
        build_example_d(8, log_domain=False)
    with pytest.raises(ConfigError):
        build_example_d(0)
    assert isinstance(ExampleDGenerator(12).slope(10), LogReal)


def test_example_d_positive_beyond_first_breakpoint():
    xs = np.concatenate([np.linspace(0.01, 300, 4000), [float(b) for b in F_D.breakpoints()[:10]]])
    assert np.all(evaluate_array(F_D, xs) > 0)


@pytest.mark.parametrize("name", ["s_squared", "s_ln_s", "exp"])
def test_analytic_derivatives_consistent(name):
    spec = ANALYTIC[name]
    for s in (1.5, 2.0, 3.7, 8.0):
        h = 1e-5 * s
        fd = (spec.value(s + h) - spec.value(s - h)) / (2 * h)
        assert math.isclose(fd, spec.derivative(s), rel_tol=1e-6)


@pytest.mark.parametrize("name", sorted(NAMED_SOURCES))
def test_json_round_trip(name):
    f = F_D if name == "example-d" else named_source(name)
    g = PiecewiseSource.from_json(f.to_json())
    assert g.pieces == f.pieces and g.tail == f.tail
    assert g.to_json() == f.to_json()


def test_alternating_source_reciprocal_lower_bound():
    f = build_alternating(5)
    val, err, n = reciprocal_integral_with_error(f, 0, 12)
    assert val >= 6 and n == 12
