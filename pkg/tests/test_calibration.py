import math

import pytest
from gmpy2 import mpq

from openwdvv import linalg
from openwdvv.calibration import (DepthError, calibrate, extend_calibration, extension_property_residuals,
                                  frobenius_symmetry_residuals, homogeneity_residuals, open_calibration,
                                  open_calibration_residuals, resonance_residual, upper_lower_residual)
from openwdvv.catalog import builtin, builtin_ids
from openwdvv.hierarchy import omega_pq_residuals
from openwdvv.model import open_to_extension
from openwdvv.virasoro import c_mn_residuals, lambda_samples

ALL = builtin_ids()


def _zero(reps):
    bad = [r for r in reps if not r.is_zero]
    assert not bad, bad[0]


@pytest.fixture(scope="module")
def cals():
    out = {}
    for ident in ALL:
        spec = builtin(ident).spec
        out[ident] = calibrate(spec, D=6, jet_order=min(spec.jet_order, 8))
    return out


def test_point_calibration_is_the_exponential():
    # fundamental solution of the point is exp(t/z): Omega^d_0 = t^(d+1)/(d+1)!
    cal = calibrate(builtin("point").spec, D=5, jet_order=8)
    for d in range(-1, 6):
        j = cal.upper(d).entries[0][0]
        assert j.as_dict() == {(d + 1,): mpq(1, math.factorial(d + 1))}
        lo = cal.lower(d).entries[0][0]
        assert lo.as_dict() == {(d + 1,): mpq(1, math.factorial(d + 1))}


@pytest.mark.parametrize("ident", ["a2_3spin", "p1"])
def test_first_calibration_matrix_is_the_raised_hessian(ident):
    spec = builtin(ident).spec
    cal = calibrate(spec, D=2, jet_order=7)
    F = spec.F(7)
    ei = spec.eta_inv
    for a in range(spec.N):
        for b in range(spec.N):
            hess = sum((F.diff(m).diff(b).scale(ei[a][m]) for m in range(spec.N)), F.ring.zero())
            assert cal.upper(0).entries[a][b] == hess
            assert cal.lower(0).entries[a][b] == hess


def test_p1_has_a_nonzero_first_resonance_matrix():
    cal = calibrate(builtin("p1").spec, D=3, jet_order=6)
    assert cal.R[0] == ((0, 0), (2, 0))
    assert resonance_residual(cal.q, cal.R).is_zero


def test_resonance_detects_bad_matrix():
    r = resonance_residual((mpq(0), mpq(1)), [((0, 1), (0, 0))])
    assert not r.is_zero and r.first_nonzero[0] == "R_1[1,2]"


@pytest.mark.parametrize("ident", ALL)
def test_calibration_identities_at_depth_6(cals, ident):
    cal = cals[ident]
    _zero(cal.integrability)
    r = upper_lower_residual(cal)
    assert r.is_zero
    _zero(homogeneity_residuals(cal))
    _zero(frobenius_symmetry_residuals(cal))
    assert cal.frobenius_symmetric
    assert resonance_residual(cal.q, cal.R).is_zero


@pytest.mark.parametrize("ident", ["point", "a2_3spin", "p1"])
def test_cmn_matrices_vanish(cals, ident):
    cal = cals[ident]
    spec = builtin(ident).spec
    lams = lambda_samples(spec.truncation.lambdas, 3, cal.delta)[:3]
    assert len(lams) == 3
    reps = c_mn_residuals(cal, 3, lams)
    assert len(reps) == 3 * sum(m + 2 for m in range(-1, 4))
    _zero(reps)


@pytest.mark.parametrize("ident", ["point", "p1"])
def test_two_index_matrices(cals, ident):
    _zero(omega_pq_residuals(cals[ident], max_sum=3))


@pytest.mark.parametrize("ident", ["point_open", "p1_open(1,0)", "p1_open(2,1/2,-)", "p1_canonical(2)"])
def test_open_calibration(ident):
    spec = builtin(ident).spec
    cal = calibrate(spec, D=4, jet_order=7)
    ecal = extend_calibration(cal, open_to_extension(spec, 7))
    _zero(ecal.integrability)
    _zero(extension_property_residuals(cal, ecal))
    oc = open_calibration(ecal, cal)
    _zero(open_calibration_residuals(oc))
    # the extension adds a zero boundary row to every resonance matrix
    for Rn in oc.R_tilde:
        assert all(v == 0 for v in Rn[spec.N])
    assert oc.mu_tilde[spec.N] == mpq(1, 2)


def test_depth_is_enforced():
    cal = calibrate(builtin("point").spec, D=2, jet_order=5)
    with pytest.raises(DepthError):
        cal.upper(3)
    with pytest.raises(DepthError):
        cal.lower(-2)


def test_linalg_inverse_is_exact():
    m = ((mpq(2), mpq(1)), (mpq(1), mpq(1)))
    inv = linalg.inverse(m)
    assert linalg.mat_mul(m, inv) == linalg.identity(2)
    assert linalg.det(m) == 1
