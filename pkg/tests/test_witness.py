import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import assume, given, settings

from conftest import instances
from fracweights.errors import NotAWitness, PreconditionFailed
from fracweights.operator import Grid
from fracweights.params import Status, make_instance, verdict
from fracweights.quad import Rectangle
from fracweights.witness import (KEYED, build_family, classify_growth, default_depth,
                                 families_for, hunt, lebesgue_shrink_probe, necessity_function,
                                 predicted_exponent, run_blowup, subspace_characteristic)


def test_case_one_blows_up(case_one_unbounded):
    fam = build_family(case_one_unbounded, "CaseOne", index=0)
    assert fam.predicted == F(1, 10)
    rep = run_blowup(case_one_unbounded, fam)
    assert rep.verdict == "BlowUp"
    assert rep.rel_error < 0.25
    assert rep.growth_ratio >= 10


def test_case_one_on_bounded_instance_is_refused():
    inst = make_instance((1, 1), ("2/5", "1/5"), 2, 2, "3/5", 0)
    assert verdict(inst).status == Status.BOUNDED
    with pytest.raises(NotAWitness):
        build_family(inst, "CaseOne", index=0)


def test_formula_dilation(case_three):
    fam = build_family(case_three, "FormulaDilation")
    assert fam.predicted == 0
    assert run_blowup(case_three, fam).verdict == "Stable"
    bumped = case_three.with_(delta=case_three.delta + F(1, 10))
    fam = build_family(bumped, "FormulaDilation")
    assert fam.predicted == F(1, 10)
    assert run_blowup(bumped, fam).verdict == "BlowUp"


def test_formula_dilation_reverses_when_negative(case_three):
    lowered = case_three.with_(delta=case_three.delta - F(1, 10))
    fam = build_family(lowered, "FormulaDilation")
    assert fam.predicted == F(1, 10)
    # sides grow instead of shrinking
    assert fam.rects[-1].sides[0] > fam.rects[0].sides[0]


def test_case_two_mirrors_case_one():
    inst = make_instance((1, 1), ("3/5", "1/5"), 2, 2, 0, "4/5")
    rep = run_blowup(inst, build_family(inst, "CaseTwo", index=0))
    assert rep.verdict == "BlowUp" and rep.rel_error < 0.25


def test_binding_case_three_never_blows_up():
    # U = V = {0}; delta sits exactly on the U constraint
    inst = make_instance((1, 1), ("3/5", "1/5"), 2, 2, "1/2", "1/10")
    assert "case_three_u" in verdict(inst).binding
    rep = run_blowup(inst, build_family(inst, "CaseThreeU"))
    assert rep.predicted == 0
    assert rep.verdict != "BlowUp"


def test_sign_patterns_checked(case_three):
    with pytest.raises(NotAWitness):
        build_family(case_three, "CaseOne", index=0)  # delta > 0
    with pytest.raises(NotAWitness):
        build_family(case_three, "CaseOne")  # no index
    with pytest.raises(NotAWitness):
        build_family(case_three, "CaseThreeV")  # constraint holds strictly
    with pytest.raises(ValueError):
        build_family(case_three, "Nope")


def test_predicted_matches_constraint_margin():
    inst = make_instance((1, 1), ("3/5", "1/5"), 2, 2, "1/20", "3/4")
    v = verdict(inst)
    margin = next(c.margin for c in v.constraints if c.name == "case_three_v")
    assert predicted_exponent(inst, "CaseThreeV") == -margin == F(1, 20)


def test_default_depth():
    assert default_depth(F(1)) == 10
    assert default_depth(F(1, 2)) == 12
    assert default_depth(F(1, 10)) == 48
    assert default_depth(F(1, 5)) == math.ceil(1.5 * math.log2(10) * 5) + 2
    assert default_depth(F(0)) == 10


@pytest.mark.parametrize("c, se, ratio, out", [
    (0.1, 0.01, 20.0, "BlowUp"), (0.1, 0.01, 5.0, "Inconclusive"),
    (0.01, 0.01, 1.1, "Stable"), (-0.3, 0.01, 0.1, "Stable")])
def test_classify_growth(c, se, ratio, out):
    assert classify_growth(c, se, ratio) == out


def test_non_integrable_rung_is_blowup():
    inst = make_instance((1,), ("1/2",), 2, 2, "1/2", "-1/2")
    reps = {r.family.label: r for r in hunt(inst)}
    assert reps["FormulaDilation"].verdict == "BlowUp"


def test_shrink_counts_singular_weight():
    # gamma q = 5/4 exceeds the one thick dimension left by the slab
    inst = make_instance((1, 1), ("1/8", "1/8"), "4/3", 2, "5/8", 0)
    assert predicted_exponent(inst, "SubbalanceShrink", 0) == F(1, 8) + F(1, 8)
    rep = run_blowup(inst, build_family(inst, "SubbalanceShrink", index=0))
    assert rep.verdict == "BlowUp" and rep.rel_error < 0.05


def test_hunt_on_bounded_is_empty(case_three):
    assert families_for(case_three) == [] and hunt(case_three) == []


# --- soundness over random instances -------------------------------------------------

@settings(max_examples=40)
@given(instances())
def test_bounded_instances_admit_no_keyed_witness(inst):
    assume(verdict(inst).status == Status.BOUNDED)
    for tag in KEYED:
        for idx in (range(inst.n) if tag in ("CaseOne", "CaseTwo") else [None]):
            with pytest.raises(NotAWitness):
                build_family(inst, tag, index=idx)


@settings(max_examples=25)
@given(instances(dims=(1, 1), formula=False))
def test_clear_violations_blow_up(inst):
    assume(verdict(inst).status == Status.UNBOUNDED)
    checked = 0
    for tag, idx in families_for(inst):
        try:
            fam = build_family(inst, tag, index=idx)
        except NotAWitness:
            continue
        if fam.predicted < F(1, 10):
            continue
        rep = run_blowup(inst, fam)
        assert rep.verdict == "BlowUp"
        assert math.isinf(rep.c_hat) or rep.rel_error < 0.25
        checked += 1
    assume(checked > 0)


# --- Lebesgue-point probe -------------------------------------------------------------

def balanced_pair():
    # factor 1 is balanced: alpha_1 = 1/p - 1/q = 1/4
    return make_instance((1, 1), ("1/2", "1/4"), 2, 4, "1/8", "1/8")


def test_shrink_probe_converges():
    inst = balanced_pair()
    rep = lebesgue_shrink_probe(inst, kept=[0])
    assert rep.converged
    assert rep.values[-1] == pytest.approx(subspace_characteristic(inst, [0]), rel=1e-2)


def test_shrink_probe_with_everything_kept():
    inst = balanced_pair()
    rep = lebesgue_shrink_probe(inst, kept=[0, 1])
    assert rep.converged and len(rep.values) == 1


def test_shrink_probe_rejects_unbalanced_factor():
    with pytest.raises(PreconditionFailed):
        lebesgue_shrink_probe(balanced_pair(), kept=[1])


# --- necessity test function ----------------------------------------------------------

def test_necessity_bound_holds(case_three):
    grid = Grid.uniform(2, 33, 2.0)
    rect = Rectangle.from_sides([1.0, 0.5], (1, 1), [(0.5,), (0.0,)])
    chk = necessity_function(case_three, rect, grid)
    assert chk.holds and chk.bound > 0


def test_necessity_plain_indicator_when_delta_zero(case_one_unbounded):
    grid = Grid.uniform(2, 17, 2.0)
    rect = Rectangle.from_sides([1.0, 1.0])
    chk = necessity_function(case_one_unbounded, rect, grid)
    assert set(np.unique(chk.f.values)) == {0.0, 1.0}
    assert chk.holds


def test_necessity_needs_samples(case_three):
    grid = Grid.uniform(2, 5, 1.0)
    rect = Rectangle.from_sides([1e-3, 1e-3], (1, 1), [(0.1,), (0.1,)])
    with pytest.raises(PreconditionFailed):
        necessity_function(case_three, rect, grid)
