"""Small dense matrices over the rationals (lists of tuples of mpq)."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import sympy
from gmpy2 import mpq

Matrix = Tuple[Tuple[mpq, ...], ...]

__all__ = ["Matrix", "identity", "zeros", "mat_mul", "mat_add", "mat_sub", "mat_scale",
           "transpose", "inverse", "det", "is_zero", "freeze", "diag", "commutator"]


def freeze(m: Sequence[Sequence[object]]) -> Matrix:
    from .series import Q

    return tuple(tuple(Q(x) for x in row) for row in m)


def identity(n: int) -> Matrix:
    return tuple(tuple(mpq(1) if i == j else mpq(0) for j in range(n)) for i in range(n))


def zeros(n: int, m: int = None) -> Matrix:
    m = n if m is None else m
    return tuple(tuple(mpq(0) for _ in range(m)) for _ in range(n))


def diag(vals: Sequence[object]) -> Matrix:
    from .series import Q

    n = len(vals)
    return tuple(tuple(Q(vals[i]) if i == j else mpq(0) for j in range(n)) for i in range(n))


def mat_mul(a: Matrix, b: Matrix) -> Matrix:
    if len(a[0]) != len(b):
        raise ValueError("shape mismatch")
    bt = list(zip(*b))
    return tuple(tuple(sum((x * y for x, y in zip(row, col)), mpq(0)) for col in bt) for row in a)


def mat_add(a: Matrix, b: Matrix) -> Matrix:
    return tuple(tuple(x + y for x, y in zip(r, s)) for r, s in zip(a, b))


def mat_sub(a: Matrix, b: Matrix) -> Matrix:
    return tuple(tuple(x - y for x, y in zip(r, s)) for r, s in zip(a, b))


def mat_scale(a: Matrix, c) -> Matrix:
    return tuple(tuple(x * c for x in r) for r in a)


def transpose(a: Matrix) -> Matrix:
    return tuple(zip(*a))


def commutator(a: Matrix, b: Matrix) -> Matrix:
    return mat_sub(mat_mul(a, b), mat_mul(b, a))


def is_zero(a: Matrix) -> bool:
    return all(x == 0 for r in a for x in r)


def _to_sympy(a: Sequence[Sequence[mpq]]) -> sympy.Matrix:
    return sympy.Matrix([[sympy.Rational(int(x.numerator), int(x.denominator)) for x in r] for r in a])


def _from_sympy(m: sympy.Matrix) -> Matrix:
    return tuple(tuple(mpq(int(sympy.fraction(x)[0]), int(sympy.fraction(x)[1])) for x in m.row(i))
                 for i in range(m.rows))


def det(a: Sequence[Sequence[mpq]]) -> mpq:
    d = _to_sympy(a).det()
    num, den = sympy.fraction(d)
    return mpq(int(num), int(den))


def inverse(a: Sequence[Sequence[mpq]]) -> Matrix:
    m = _to_sympy(a)
    if m.det() == 0:
        raise ZeroDivisionError("singular matrix")
    return _from_sympy(m.inv())
