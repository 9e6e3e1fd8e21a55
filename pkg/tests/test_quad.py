import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracweights.errors import NonIntegrable, ToleranceNotMet
from fracweights.params import make_instance
from fracweights.quad import (QuadConfig, Rectangle, integrate_power_box, integrate_power_over_rect,
                              mc_integrate_power, weight_averages)

# Reference integrals of |x|^e over boxes, from mpmath tanh-sinh on orthant pieces
# (strongly singular corner cubes from the polar form 2/(e+2) int_0^{pi/4} sec^{e+2}).
MPMATH_BOXES = [
    ([-0.3, -1.0], [0.7, 0.5], -1.2, 5.44209839336222),
    ([0.5, 0.2], [1.5, 2.0], 0.5, 2.21454529385659),
    ([0.25, -0.5], [4.0, 0.75], -0.6, 3.47313273394221),
    ([0.0, 0.0], [1.0, 1.0], -1.5, 3.3235848647237498851),
    ([-1.0, -1.0], [1.0, 1.0], -1.9, 4 * 15.882563943463293197),
    ([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], -2.0, 1.91853105561093),
]


def box_rect(lo, hi):
    return Rectangle.from_bounds([[a] for a in lo], [[b] for b in hi])


def test_constant_integrand_is_volume():
    rect = Rectangle.from_sides([0.3, 2.5], (2, 1), [(1.0, -2.0), (0.5,)])
    assert integrate_power_over_rect(rect, 0.0).value == pytest.approx(rect.volume, rel=1e-12)


def test_inverse_sqrt_unit_interval():
    assert integrate_power_box([0.0], [1.0], -0.5).value == pytest.approx(2.0, abs=1e-8)


def test_inverse_radius_unit_square():
    val = integrate_power_box([0.0, 0.0], [1.0, 1.0], -1.0).value
    assert val == pytest.approx(2 * math.log(1 + math.sqrt(2)), abs=1e-6)


@pytest.mark.parametrize("lo, hi, e, ref", MPMATH_BOXES)
def test_against_mpmath(lo, hi, e, ref):
    res = integrate_power_box(lo, hi, e)
    assert res.value == pytest.approx(ref, rel=1e-9)


def test_non_integrable_at_origin():
    with pytest.raises(NonIntegrable):
        integrate_power_box([0.0, 0.0], [1.0, 1.0], -2.0)
    # the same exponent is harmless away from the origin
    assert integrate_power_box([1.0, 1.0], [2.0, 2.0], -2.0).value > 0


def test_tolerance_not_met_carries_partial_value():
    # an elongated box needs about log2(aspect) shells before its corner cube is reached
    cfg = QuadConfig(tol=1e-10, s_max=2)
    with pytest.raises(ToleranceNotMet) as exc:
        integrate_power_box([0.0, 0.0], [1.0, 2.0 ** -10], -1.5, cfg)
    assert exc.value.value > 0 and exc.value.error_estimate > 0


def test_weight_average_examples():
    inst = make_instance((1,), ("1/2",), 2, 2, "1/4", "1/4")
    rect = Rectangle.from_bounds([[0.0]], [[1.0]])
    w = weight_averages(rect, inst)
    assert w.omega == pytest.approx(math.sqrt(2), rel=1e-10)
    flat = make_instance((1, 1), ("3/10", "1/5"), 2, 2, 0, 0)
    w0 = weight_averages(Rectangle.from_sides([0.1, 3.0]), flat)
    assert (w0.omega, w0.sigma) == (1.0, 1.0)


def test_weight_average_names_factor():
    inst = make_instance((1,), ("1/2",), 2, 2, "3/4", "-1/4")  # gamma q = 3/2 > 1
    with pytest.raises(NonIntegrable) as exc:
        weight_averages(Rectangle.from_sides([1.0]), inst)
    assert exc.value.factor == "omega"


# --- Monte Carlo oracle --------------------------------------------------------

def test_mc_constant_exact():
    rect = box_rect([0.2, -1.0], [0.7, -0.5])
    assert mc_integrate_power(rect, 0.0).estimate == pytest.approx(rect.volume, rel=1e-14)


def test_mc_deterministic_per_seed():
    rect = box_rect([-0.5, -0.5], [1.0, 1.0])
    a = mc_integrate_power(rect, -1.0, 20_000, seed=3)
    b = mc_integrate_power(rect, -1.0, 20_000, seed=3)
    assert a == b


@pytest.mark.slow
def test_mc_matches_log_value():
    res = mc_integrate_power(box_rect([0.0, 0.0], [1.0, 1.0]), -1.0, 1_000_000, seed=0)
    assert abs(res.estimate - 2 * math.log(1 + math.sqrt(2))) < 3 * res.stderr


rects = st.builds(
    lambda c0, c1, s0, s1: Rectangle.from_sides([s0, s1], (1, 1), [(c0,), (c1,)]),
    st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 4), st.floats(0.05, 4))


@given(rects, st.floats(-1.9, 2.0), st.integers(0, 2 ** 32 - 1))
def test_mc_agrees_with_quadrature(rect, e, seed):
    det = integrate_power_over_rect(rect, e).value
    mc = mc_integrate_power(rect, e, 20_000, seed)
    assert abs(det - mc.estimate) <= 3 * mc.stderr + 1e-9 * abs(det)


# --- invariants ------------------------------------------------------------------

@given(rects, st.floats(-1.9, 2.0), st.floats(0.01, 100))
def test_dilation_scaling(rect, e, lam):
    base = integrate_power_over_rect(rect, e).value
    scaled = integrate_power_over_rect(rect.scaled(lam), e).value
    assert scaled == pytest.approx(lam ** (2 + e) * base, rel=1e-6)


@given(rects, st.floats(-1.9, 2.0), st.floats(1.0, 3.0))
def test_enlarging_never_decreases(rect, e, grow):
    small = integrate_power_over_rect(rect, e).value
    big = Rectangle(rect.centers, tuple(grow * h for h in rect.half_sides))
    assert integrate_power_over_rect(big, e).value >= small * (1 - 1e-12)


@given(rects, st.floats(-1.9, 2.0))
def test_tighter_tolerance_never_increases_error(rect, e):
    errs = [integrate_power_over_rect(rect, e, QuadConfig(tol=t)).error_estimate
            for t in (1e-4, 1e-6, 1e-8, 1e-10)]
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_higher_dimensional_factor():
    # a 2-dimensional factor times a 1-dimensional one, origin inside
    rect = Rectangle.from_sides([1.0, 1.0], (2, 1))
    res = integrate_power_over_rect(rect, -1.0)
    ref = integrate_power_box([-0.5] * 3, [0.5] * 3, -1.0).value
    assert res.value == pytest.approx(ref, rel=1e-12)
    mc = mc_integrate_power(rect, -1.0, 50_000, seed=1)
    assert abs(mc.estimate - res.value) < 3 * mc.stderr


def test_sides_and_volume():
    rect = Rectangle.from_sides([2.0, 0.5], (2, 1))
    assert rect.N == 3 and rect.volume == pytest.approx(4.0 * 0.5)
    assert np.allclose(rect.bounds()[0], [-1, -1, -0.25])
