import pytest
from gmpy2 import mpq

from openwdvv.catalog import UnknownModelError, builtin, builtin_ids, list_builtins, p1_open


def test_ids_and_lookup():
    ids = builtin_ids()
    assert ids[:4] == ["point", "point_open", "a2_3spin", "p1"]
    assert [b.spec.name for b in list_builtins()][:4] == ids[:4]
    assert builtin("p1_open( 2 , 1/2 )").id == "p1_open(2,1/2,+)"
    assert builtin("p1_open(2,1/2,-)").id == "p1_open(2,1/2,-)"
    with pytest.raises(UnknownModelError):
        builtin("p3")


def test_provenance_recorded():
    for b in list_builtins():
        assert b.provenance


def test_offset_coordinate_for_shifted_family():
    spec = builtin("p1_open(2,1/2)").spec
    assert spec.open_ext.s_base == mpq(-1, 2)
    # F^o(0, 0, sigma) = sinh(2 sigma): odd in sigma
    Fo = spec.Fo(7)
    phi = Fo.restrict_zero([0, 1])
    assert phi.coeff((0, 0, 1)) == 2 and phi.coeff((0, 0, 2)) == 0 and phi.coeff((0, 0, 3)) == mpq(8, 6)


def test_family_arguments_validated():
    with pytest.raises(ValueError):
        p1_open(1, 0, sign=2)
    with pytest.raises(ValueError):
        builtin("p1_open(0.5,0)")


def test_recommended_truncations():
    assert builtin("p1").truncation.m_max == 3
    assert builtin("point").truncation.P_max == 4
    assert builtin("p1_open(1,0)").truncation.m_max == 2
