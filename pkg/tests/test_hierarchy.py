import itertools
import math

import pytest
from gmpy2 import mpq

from openwdvv.calibration import calibrate, extend_calibration, open_calibration
from openwdvv.catalog import builtin
from openwdvv.hierarchy import (DepthError, DescSeries, HierarchyError, descendent_potential,
                                descendent_vector_potentials, frobenius_cross_check, open_descendent_potential,
                                open_restriction_residual, open_trr_residuals, point_open_reconstruction_residuals,
                                restriction_residual, string_dilaton_residuals, string_equation_residual,
                                topological_solution, trr_residuals, vector_potential_residuals, make_layout)
from openwdvv.model import open_to_extension


def _zero(reps):
    bad = [r for r in reps if not r.is_zero]
    assert not bad, bad[0]


def _closed(ident, P, G, D=None, J=None):
    spec = builtin(ident).spec
    J = spec.jet_order if J is None else J
    cal = calibrate(spec, D=2 * P if D is None else D, jet_order=J)
    top = topological_solution(cal, P, G, P_ext=P)
    return spec, cal, top


@pytest.fixture(scope="module")
def point44():
    spec, cal, top = _closed("point", 4, 4, D=8, J=10)
    return spec, cal, top, descendent_potential(cal, top)


def _point_correlator(ds):
    """Genus-0 point correlator from the string equation: (n-3)!/prod d_i!."""
    n = len(ds)
    if n < 3 or sum(ds) != n - 3:
        return mpq(0)
    return mpq(math.factorial(n - 3), math.prod(math.factorial(d) for d in ds))


def test_point_potential_matches_string_equation_oracle(point44):
    _, _, top, F = point44
    lay = top.layout
    valid_total, valid_desc = F.jet.valid[0], F.jet.valid[1]
    checked = 0
    for ex in itertools.product(*(range(valid_total + 1) for _ in range(lay.nvars))):
        if sum(ex) > valid_total or sum(ex[1:]) > valid_desc:
            continue
        ds = [p for p in range(lay.P + 1) for _ in range(ex[lay.idx(0, p)])]
        want = _point_correlator(ds) / math.prod(math.factorial(e) for e in ex)
        assert F.jet.coeff(ex) == want, ex
        checked += 1
    assert checked > 100


def test_point_first_correlators(point44):
    _, _, top, F = point44
    lay = top.layout
    ex = [0] * lay.nvars
    ex[lay.idx(0, 0)] = 3
    assert F.jet.coeff(ex) * 6 == 1  # <tau_0^3> = 1
    ex[lay.idx(0, 1)] = 1
    assert F.jet.coeff(ex) * 6 == 1  # <tau_1 tau_0^3> = 1


@pytest.mark.parametrize("ident,J", [("point", 10), ("a2_3spin", 8), ("p1", 8)])
def test_string_dilaton_at_P4_G4(ident, J):
    spec, cal, top = _closed(ident, 4, 4, D=4, J=J)
    reps = string_dilaton_residuals(top)
    assert len(reps) >= 2
    _zero(reps)


@pytest.mark.parametrize("ident,P,G", [("point", 4, 4), ("a2_3spin", 3, 3), ("p1", 2, 3)])
def test_descendent_potential_identities(ident, P, G):
    spec, cal, top = _closed(ident, P, G)
    F = descendent_potential(cal, top)
    assert string_equation_residual(F, top, spec.eta).is_zero
    assert restriction_residual(F, top, spec.F(top.layout.J)).is_zero
    _zero(trr_residuals(F, top, spec.eta_inv))


@pytest.mark.parametrize("ident,P", [("point", 4), ("a2_3spin", 4), ("p1", 4)])
def test_vector_potentials_up_to_p3(ident, P):
    spec = builtin(ident).spec
    G = 2 if ident == "p1" else 3
    J = 6 if ident == "p1" else spec.jet_order
    cal = calibrate(spec, D=2 * P, jet_order=J)
    top = topological_solution(cal, P, G, P_ext=P)
    Fv = descendent_vector_potentials(cal, top, range(-1, 4))
    assert sorted({p for _, p in Fv}) == [-1, 0, 1, 2, 3]
    _zero(vector_potential_residuals(cal, top, Fv, spec.vector_potential(J)))
    F = descendent_potential(cal, top)
    _zero(frobenius_cross_check(F, Fv, spec.eta_inv))


def test_trr_detects_perturbation(point44):
    spec, _, top, F = point44
    lay = top.layout
    bad = DescSeries(lay, F.jet + lay.t(0, 0) ** 2 * lay.t(0, 1))
    reps = trr_residuals(bad, top, spec.eta_inv)
    assert any(not r.is_zero for r in reps)


def _open(ident, P, G, P_ext, J):
    spec = builtin(ident).spec
    cal = calibrate(spec, D=P + P_ext, jet_order=J)
    ecal = extend_calibration(cal, open_to_extension(spec, J))
    oc = open_calibration(ecal, cal)
    etop = topological_solution(ecal, P, G, P_ext=P_ext)
    return spec, cal, oc, etop


@pytest.mark.parametrize("ident,P,G,J", [("point_open", 3, 4, 10), ("p1_open(1,0)", 2, 2, 8),
                                         ("p1_open(0,3,-)", 2, 2, 8), ("p1_canonical(1)", 2, 2, 8)])
def test_open_descendent_potential(ident, P, G, J):
    spec, cal, oc, etop = _open(ident, P, G, P, J)
    assert etop.layout.open_var
    _zero(string_dilaton_residuals(etop))
    F = descendent_potential(cal, etop)
    Fo = open_descendent_potential(oc, etop)
    assert open_restriction_residual(Fo, etop, spec.Fo(etop.layout.J)).is_zero
    _zero(open_trr_residuals(F, Fo, spec.eta_inv))


def test_point_open_reconstruction_identity():
    spec, cal, oc, etop = _open("point_open", 3, 4, 3, 10)
    Fo = open_descendent_potential(oc, etop)
    reps = point_open_reconstruction_residuals(Fo, 3)
    assert [r.name for r in reps] == ["dF^o/ds_%d reconstruction" % n for n in range(4)]
    _zero(reps)
    with pytest.raises(DepthError):
        point_open_reconstruction_residuals(Fo, 4)


def test_open_potential_first_coefficients():
    spec, cal, oc, etop = _open("point_open", 3, 4, 3, 10)
    Fo = open_descendent_potential(oc, etop)
    lay = etop.layout
    t, s = lay.idx(0, 0), lay.idx(1, 0)
    ex = [0] * lay.nvars
    ex[t] = ex[s] = 1
    assert Fo.jet.coeff(ex) == 1
    ex = [0] * lay.nvars
    ex[s] = 3
    assert Fo.jet.coeff(ex) == mpq(1, 6)


def test_layout_rejects_insufficient_depth():
    cal = calibrate(builtin("point").spec, D=2, jet_order=5)
    with pytest.raises(DepthError):
        make_layout(cal, 2, 2, P_ext=5)
    with pytest.raises(HierarchyError):
        make_layout(cal, 2, 2, P_ext=1)
