import math
from dataclasses import replace

import pytest
from gmpy2 import mpq
from hypothesis import given, strategies as st

from openwdvv import linalg
from openwdvv.calibration import calibrate, extend_calibration, open_calibration
from openwdvv.catalog import builtin
from openwdvv.hierarchy import DescSeries, descendent_potential, descendent_vector_potentials, topological_solution
from openwdvv.model import ModelError, open_to_extension
from openwdvv.virasoro import (WindowError, bracket_p, build_closed, build_closed_from_data, build_open,
                               build_open_from_data, closed_residual, commutator_check, commutator_suite,
                               flat_f_residual, lambda_samples, last_group_coefficients, normal_form_difference,
                               open_residual, pm_matrix, pm_normal_ordered, point_open_operator_closed_form,
                               rising, rspin_operator_closed_form, support_soundness, weyl_commutator)

rationals = st.builds(lambda p, q: mpq(p, q), st.integers(-5, 5), st.integers(1, 4))


@st.composite
def square(draw, n):
    return tuple(tuple(draw(rationals) for _ in range(n)) for _ in range(n))


@given(st.integers(1, 3).flatmap(lambda n: st.tuples(square(n), square(n))), st.integers(-1, 6))
def test_pm_recursion_equals_normal_ordered_product(AR, m):
    A, R = AR
    assert pm_matrix(A, R, m) == pm_normal_ordered(A, R, m)


def test_pm_with_zero_r_is_a_rising_factorial():
    mu = (mpq(-1, 3), mpq(1, 3))
    A = linalg.diag(mu)
    for m in range(-1, 5):
        P = pm_matrix(A, linalg.zeros(2), m)
        for a in range(2):
            assert P[a][a] == rising(mu[a] - mpq(1, 2), m + 1)


def test_bracket_projects_on_grading_differences():
    q = (mpq(0), mpq(1))
    X = ((1, 2), (3, 4))
    assert bracket_p(X, q, 0) == ((1, 0), (0, 4))
    assert bracket_p(X, q, 1) == ((0, 0), (3, 0))
    assert bracket_p(X, q, -1) == ((0, 2), (0, 0))


def test_weyl_canonical_commutator():
    x = {(0, ((0, 0),), ()): mpq(1)}
    d = {(0, (), ((0, 0),)): mpq(1)}
    assert weyl_commutator(d, x) == {(0, (), ()): mpq(1)}


_VARS = [(0, 0), (0, 1), (1, 0)]


@st.composite
def weyl_elements(draw):
    out = {}
    for _ in range(draw(st.integers(1, 3))):
        xs = tuple(sorted(draw(st.lists(st.sampled_from(_VARS), max_size=2))))
        ds = tuple(sorted(draw(st.lists(st.sampled_from(_VARS), max_size=2))))
        out[(0, xs, ds)] = draw(rationals.filter(bool))
    return out


def _add(X, Y, s=1):
    out = dict(X)
    for k, v in Y.items():
        out[k] = out.get(k, 0) + s * v
        if out[k] == 0:
            del out[k]
    return out


@given(weyl_elements(), weyl_elements(), weyl_elements())
def test_weyl_jacobi_identity(X, Y, Z):
    c = weyl_commutator
    total = _add(_add(c(X, c(Y, Z)), c(Y, c(Z, X))), c(Z, c(X, Y)))
    assert not total


# -- printed displays ------------------------------------------------------------

@pytest.fixture(scope="module")
def a2cal():
    return calibrate(builtin("a2_3spin").spec, D=2, jet_order=5)


@pytest.fixture(scope="module")
def pt_open():
    spec = builtin("point_open").spec
    cal = calibrate(spec, D=3, jet_order=5)
    return cal, open_calibration(extend_calibration(cal, open_to_extension(spec, 5)), cal)


@pytest.mark.parametrize("m", range(-1, 4))
def test_three_spin_operators_match_rising_factorial_display(a2cal, m):
    spec = builtin("a2_3spin").spec
    op = build_closed(a2cal, m, window=4)
    assert normal_form_difference("closed", op.normal_form(), rspin_operator_closed_form(3, m, 4)).is_zero
    delta = a2cal.delta
    oo = build_open_from_data(op, a2cal.mu() + (mpq(1, 2),), [[0] * 3] * 3, a2cal.q + ((1 + delta) / 2,), spec.eta)
    assert normal_form_difference("open", oo.normal_form(), rspin_operator_closed_form(3, m, 4, True)).is_zero
    if m == 0:
        assert op.const0 == mpq(8, 72) and oo.const_o == mpq(3, 4)


@pytest.mark.parametrize("m", range(-1, 4))
def test_point_operators_match_display(pt_open, m):
    cal, oc = pt_open
    op = build_closed(cal, m, window=4)
    oo = build_open(oc, m, window=4)
    assert normal_form_difference("pt", op.normal_form(), rspin_operator_closed_form(2, m, 4)).is_zero
    assert normal_form_difference("pt open", oo.normal_form(), point_open_operator_closed_form(op)).is_zero
    if m >= 1:
        assert oo.tail == {m - 1: mpq(3 * math.factorial(m + 1), 4)}
    else:
        assert not oo.tail


def test_printed_display_comparison_detects_mismatch(a2cal):
    op = build_closed(a2cal, 0, window=3)
    bad = replace(op, const0=op.const0 + 1)
    r = normal_form_difference("x", bad.normal_form(), rspin_operator_closed_form(3, 0, 3))
    assert not r.is_zero and r.first_nonzero == ("1", "1")


def test_support_soundness(a2cal):
    for m in range(-1, 4):
        r = support_soundness(lambda s: build_closed_from_data(a2cal.mu(), a2cal.R_sum, a2cal.q,
                                                               a2cal.model.eta, m, 3, slack=s))
        assert r.is_zero


def test_closed_operator_refuses_non_symmetric_data():
    cal = calibrate(builtin("p1_open(1,0)").spec, D=2, jet_order=5)
    ext = extend_calibration(cal, open_to_extension(builtin("p1_open(1,0)").spec, 5))
    with pytest.raises(ModelError):
        build_closed(ext, 0)


# -- genus-zero residuals -----------------------------------------------------------

@pytest.fixture(scope="module")
def point_F():
    cal = calibrate(builtin("point").spec, D=8, jet_order=10)
    top = topological_solution(cal, 3, 3, P_ext=5)
    return cal, top, descendent_potential(cal, top)


@pytest.mark.parametrize("m", range(-1, 3))
def test_point_closed_residual(point_F, m):
    cal, top, F = point_F
    assert closed_residual(build_closed(cal, m, window=3), F).is_zero


def test_perturbed_potential_is_detected(point_F):
    cal, top, F = point_F
    bad = DescSeries(F.layout, F.jet + F.layout.t(0, 2))
    r = closed_residual(build_closed(cal, -1, window=3), bad).report()
    assert not r.is_zero and r.first_nonzero == ("t1_3", "1")


def test_flat_f_form_at_several_lambdas(point_F):
    cal, top, F = point_F
    Fv = descendent_vector_potentials(cal, top, range(-4, 4), resolved_only=True)
    for m in range(-1, 3):
        for lam in lambda_samples((mpq(1, 3),), m, cal.delta):
            assert all(r.is_zero for r in flat_f_residual(cal, top, Fv, m, lam))


def test_lambda_samples():
    s = lambda_samples((mpq(1), mpq(1, 3)), 3, mpq(1))
    assert s[:2] == [mpq(1), mpq(1, 3)] and len(s) == 5 and len(set(s)) == 5


def test_open_residual_on_point(pt_open):
    spec = builtin("point_open").spec
    cal = calibrate(spec, D=7, jet_order=10)
    ecal = extend_calibration(cal, open_to_extension(spec, 10))
    oc = open_calibration(ecal, cal)
    etop = topological_solution(ecal, 3, 3, P_ext=4)
    F = descendent_potential(cal, etop)
    from openwdvv.hierarchy import open_descendent_potential
    Fo = open_descendent_potential(oc, etop)
    for m in range(-1, 2):
        r1, r2 = open_residual(build_open(oc, m, window=3), F, Fo)
        assert r1.is_zero
        assert (r2.jet - closed_residual(build_closed(cal, m, window=3), F).jet).first_nonzero() is None
        assert not any(last_group_coefficients(oc, m).values())
    bad = DescSeries(Fo.layout, Fo.jet + Fo.layout.t(1, 1))
    assert not open_residual(build_open(oc, 0, window=3), F, bad)[0].is_zero


# -- commutators --------------------------------------------------------------------

def test_closed_commutators(a2cal):
    reps = commutator_suite(lambda m, W: build_closed(a2cal, m, window=W), [-1, 0, 1, 2], 2, 2)
    assert len(reps) == 20 and all(r.is_zero for r in reps)
    assert all(r.data["stable"] for r in reps)


def test_open_commutators(pt_open):
    cal, oc = pt_open
    reps = commutator_suite(lambda m, W: build_open(oc, m, window=W), [-1, 0, 1, 2], 2, 2)
    assert all(r.is_zero for r in reps)


@pytest.mark.parametrize("knock_out", ["const_o", "tail"])
def test_commutators_need_the_boundary_constants(pt_open, knock_out):
    cal, oc = pt_open

    def build(m, W):
        op = build_open(oc, m, window=W)
        if knock_out == "const_o":
            return replace(op, const_o=mpq(0))
        return replace(op, tail={})

    reps = commutator_suite(build, [-1, 1], 2, 2)
    failing = {r.name for r in reps if not r.is_zero}
    assert "[L_-1, L_1] table" in failing and "[L_-1, L_1] monomial" in failing


def test_commutator_window_is_enforced(a2cal):
    A = build_closed(a2cal, 1, window=2)
    with pytest.raises(WindowError):
        commutator_check(A, A, A, window=2)
