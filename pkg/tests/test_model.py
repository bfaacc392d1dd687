import pytest
from gmpy2 import mpq

from openwdvv.catalog import builtin
from openwdvv.model import (EulerData, ModelError, ModelSpec, OpenWDVVError, PotentialExpr, PreconditionError,
                            ResidualReport, canonical_open_solution, euler_residual, grading_check,
                            ode_residual, open_to_extension, open_wdvv_residual, structure_constants, to_flat_f,
                            unit_checks, wdvv_residual)
from openwdvv.mutations import a3_model, broken_open_unit, broken_wdvv

CLOSED = ["point", "a2_3spin", "p1"]
OPEN = ["point_open", "p1_open(1,0)", "p1_open(2,1/2)", "p1_open(0,0)", "p1_open(0,3)",
        "p1_open(1,0,-)", "p1_open(2,1/2,-)", "p1_open(0,0,-)", "p1_open(0,3,-)",
        "p1_canonical(1)", "p1_canonical(2)"]


def _all_zero(reps):
    return all(r.is_zero for r in reps)


@pytest.mark.parametrize("ident", CLOSED)
def test_wdvv_holds_at_order_8(ident):
    reps = wdvv_residual(builtin(ident).spec, 8)
    assert _all_zero(reps)
    assert min(r.valid_order for r in reps) >= 5


@pytest.mark.parametrize("ident", OPEN)
def test_open_wdvv_and_unit(ident):
    spec = builtin(ident).spec
    assert _all_zero(open_wdvv_residual(spec, 8))
    assert unit_checks(spec, 8).is_zero


@pytest.mark.parametrize("ident", [i for i in OPEN if i.startswith("p1_open")])
def test_phi_ode(ident):
    r = ode_residual(builtin(ident).spec, 8)
    assert r.is_zero and r.valid_order >= 6


def test_phi_ode_detects_wrong_normalisation():
    # F^o = t1 s + 4 e^{t2/2} sinh(s)/ 1: (phi')^2 - phi phi'' = 16
    spec = builtin("p1_open(1,0)").spec
    Fo = spec.open_ext.Fo
    doubled = PotentialExpr(Fo.nvars, Fo.monomials,
                            tuple(type(t)(t.coeff * 2, t.exponent, t.prefactor) for t in Fo.exp_terms))
    from dataclasses import replace
    bad = replace(spec, open_ext=replace(spec.open_ext, Fo=doubled))
    r = ode_residual(bad, 8)
    assert not r.is_zero and r.first_nonzero == ("1", "12")


def test_a3_potential_is_associative_and_mutation_is_not():
    assert _all_zero(wdvv_residual(a3_model(), 8))
    reps = wdvv_residual(broken_wdvv().spec, 8)
    bad = [r for r in reps if not r.is_zero]
    assert bad and bad[0].first_nonzero == ("t3^2", "-2")
    assert unit_checks(broken_wdvv().spec).is_zero


def test_broken_open_unit_is_located():
    spec = broken_open_unit().spec
    assert _all_zero(open_wdvv_residual(spec))
    r = unit_checks(spec)
    assert not r.is_zero
    assert r.first_nonzero == ("d2Fo/dt1dt1 @ 1", "1")
    with pytest.raises(OpenWDVVError):
        open_to_extension(spec)


@pytest.mark.parametrize("ident", CLOSED + OPEN)
def test_euler_homogeneity(ident):
    spec = builtin(ident).spec
    assert euler_residual(spec, 8).is_zero
    assert grading_check(spec).is_zero


def test_euler_detects_wrong_dimension():
    spec = builtin("a2_3spin").spec
    from dataclasses import replace
    wrong = replace(spec, euler=EulerData(spec.euler.q, spec.euler.r, mpq(1, 2)))
    assert not euler_residual(wrong, 8).is_zero
    assert not grading_check(wrong).is_zero


def test_structure_constants_of_point():
    c = structure_constants(builtin("point").spec, 4)
    assert c[0][0][0].coeff((0,)) == 1


def test_flat_f_form_matches_frobenius_form():
    spec = builtin("p1").spec
    flat = to_flat_f(spec)
    assert flat.mode == "flat_f"
    for a, b in zip(flat.vector_potential(8), spec.vector_potential(8)):
        assert a == b
    assert _all_zero(wdvv_residual(flat, 8))
    assert unit_checks(flat, 8).is_zero


def test_extension_is_a_flat_f_manifold():
    spec = builtin("p1_open(2,1/2)").spec
    ext = open_to_extension(spec, 8)
    assert ext.N == 3 and ext.mode == "flat_f"
    assert ext.euler.q[2] == (1 + spec.euler.delta) / 2
    assert _all_zero(wdvv_residual(ext, 8))
    assert unit_checks(ext, 8).is_zero


def test_canonical_solution_requires_canonical_coordinate():
    base = builtin("p1").spec
    not_canonical = PotentialExpr.poly(2, {(1, 0): 1, (0, 1): 1})
    with pytest.raises(PreconditionError):
        canonical_open_solution(base, not_canonical)


@pytest.mark.parametrize("k,sign", [(1, "+"), (2, "-")])
def test_canonical_solutions_are_degenerate_family_members(k, sign):
    can = builtin("p1_canonical(%d)" % k).spec
    fam = builtin("p1_open(0,0,%s)" % sign).spec
    assert can.Fo(8) == fam.Fo(8)


def test_metric_validation():
    with pytest.raises(ModelError):
        ModelSpec(N=1, potential=PotentialExpr.poly(1, {(3,): 1}), eta=((mpq(0),),))
    with pytest.raises(ModelError):
        ModelSpec(N=2, potential=PotentialExpr.poly(2, {(3, 0): 1}),
                  eta=((mpq(0), mpq(1)), (mpq(2), mpq(0))))
    with pytest.raises(ModelError):
        PotentialExpr.poly(2, {(1,): 1})


def test_report_combination():
    a = ResidualReport("a", 5, True)
    b = ResidualReport("b", 3, False, ("x", "2"))
    c = ResidualReport.combine("ab", [a, b])
    assert not c.is_zero and c.valid_order == 3
    assert c.first_nonzero == ("b @ x", "2")
    assert c.as_dict()["first_nonzero"] == {"monomial": "b @ x", "value": "2"}
