import math

import pytest
from gmpy2 import mpq
from hypothesis import given, strategies as st

from openwdvv.series import (CompositionError, DimensionError, Jet, JetMatrix, Q, Ring, embed, exp_form_jet,
                             exp_linear_jet, matrix_series_inverse, substitute, taylor_shift)

R3 = Ring(3, 5, names=("x", "y", "z"))

rationals = st.builds(lambda p, q: mpq(p, q), st.integers(-9, 9), st.integers(1, 6))


@st.composite
def jets(draw, ring=R3, max_terms=6):
    n = draw(st.integers(0, max_terms))
    terms = {}
    for _ in range(n):
        ex = tuple(draw(st.integers(0, 2)) for _ in range(ring.nvars))
        terms[ex] = draw(rationals)
    return ring.from_terms(terms)


@given(jets(), jets())
def test_addition_and_multiplication_commute(a, b):
    assert a + b == b + a
    assert a * b == b * a


@given(jets(), jets(), jets())
def test_ring_associativity_and_distributivity(a, b, c):
    assert (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c
    assert (a + b) - b == a


@given(jets(), jets(), st.integers(0, 2))
def test_leibniz_rule(a, b, i):
    assert (a * b).diff(i) == a.diff(i) * b + a * b.diff(i)


@given(rationals, rationals)
def test_exponential_addition_law(a, b):
    ea = exp_linear_jet(1, 0, a, 7, nvars=1)
    eb = exp_linear_jet(1, 0, b, 7, nvars=1)
    eab = exp_linear_jet(1, 0, a + b, 7, nvars=1)
    assert ea * eb == eab


def test_exponential_coefficients():
    e = exp_linear_jet(2, 0, mpq(1, 2), 6, nvars=1)
    for k in range(7):
        assert e.coeff((k,)) == 2 * mpq(1, 2) ** k / math.factorial(k)


def test_exp_form_jet_is_product_of_one_variable_exponentials():
    ring = Ring(2, 6)
    e = exp_form_jet(3, [(0, mpq(1)), (1, mpq(-2))], ring)
    f = exp_linear_jet(3, 0, 1, 6, ring=ring) * exp_linear_jet(1, 1, -2, 6, ring=ring)
    assert e == f


def test_product_validity_box_is_pessimistic():
    ring = Ring(1, 8)
    x = ring.var(0)
    inexact = ring.from_terms({(0,): 1, (1,): 1}, valid=(3,), exact=False)
    assert inexact.valid_order == 3
    prod = inexact * x
    assert prod.valid_order == 4
    assert (inexact * inexact).valid_order == 3


def test_second_filtration_caps_monomials():
    ring = Ring(2, 6, filtrations=[("desc", (0, 1), 1)])
    y = ring.var(1)
    assert (y * y).is_zero()
    assert not (ring.var(0) ** 3 * y).is_zero()


def test_different_rings_are_rejected():
    with pytest.raises(DimensionError):
        Ring(1, 3).var(0) + Ring(2, 3).var(0)


def test_rationals_are_exact():
    assert Q("3/6") == mpq(1, 2)
    assert Q(4) == 4
    with pytest.raises(TypeError):
        Q(0.5)


def test_substitute_and_taylor_shift_agree():
    ring = Ring(2, 6)
    x, y = ring.var(0), ring.var(1)
    f = x ** 3 + x.scale(2) * y + 1
    shifted = taylor_shift(f, {0: y})
    assert shifted == substitute(f, [x + y, y], polynomial=True)
    assert shifted == (x + y) ** 3 + (x + y).scale(2) * y + 1


def test_taylor_shift_needs_positive_order_increment():
    ring = Ring(1, 4)
    with pytest.raises(CompositionError):
        taylor_shift(ring.var(0), {0: ring.one()})


def test_embed_renames_variables():
    src = Ring(1, 4)
    dst = Ring(2, 4)
    j = embed(src.var(0) ** 2, dst, [1])
    assert j.coeff((0, 2)) == 1


@given(st.lists(rationals, min_size=4, max_size=4))
def test_matrix_series_inverse(vals):
    ring = Ring(1, 4)
    A0 = JetMatrix.identity(ring, 2)
    A1 = JetMatrix.constant(ring, [[vals[0], vals[1]], [vals[2], vals[3]]])
    inv = matrix_series_inverse([A0, A1], 4)
    # (sum inv_k z^k)(I + A1 z) = I up to z^4
    for k in range(1, 5):
        acc = inv[k] + inv[k - 1] @ A1
        assert acc.is_zero()
