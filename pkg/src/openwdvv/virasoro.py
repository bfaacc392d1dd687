"""Virasoro operators as exact coefficient tables, their genus-0 residuals
and their commutators.

Operators live in the class spanned by

    eps^2 d d,  eps d,  t~ d,  eps^-1 t~,  eps^-2 t~ t~,  constants

(plus the mixed ``eps^2 d_s d`` and ``eps d_s`` terms of the open
operators).  ``eps`` is never a symbol: every term carries an integer
``eps``-weight.  Variables are pairs ``(a, p)`` with ``a`` a 0-based
coordinate index; in open operators ``a = N`` is the boundary coordinate
``s`` (``s_p = t^{N+1}_p``).

Closed operators (``eta`` the metric, ``mu = q - delta/2``,
``R = sum R_n``):

* ``eps^-2``: ``1/2 (-1)^{d1} ([P_m(mu+d2+1, R)]_{m+d1+d2+1})^nu_b eta_{a nu} t~^a_{d1} t~^b_{d2}``
* ``eps^0``: ``([P_m(mu+d+1, R)]_{m+d-k})^b_a t~^a_d d/dt^b_k`` for ``0 <= k <= m+d``
* ``eps^2``: ``1/2 (-1)^{d2+1} ([P_m(mu-d2, R)]_{m-1-d1-d2})^a_nu eta^{nu b} d/dt^a_{d1} d/dt^b_{d2}``
* constant ``delta_{m,0} tr(1/4 - mu^2)/4``.

Open operators add, with the extended data ``mu~, R~, q~`` and writing
``X_k = P_m(mu~+k, R~)`` (row ``N`` = the boundary coordinate):

* ``eps^-1``: ``([X_{d+1}]_{m+d+1})^N_a t~^a_d``
* ``eps^0``: ``([X_{d+1}]_{m+d-k})^N_a t~^a_d d/ds_k`` and ``delta_{m,0} 3/4``
* ``eps^1``: ``(-1)^{k+1} ([P_m(mu~-k, R~)]_{m-k})^N_a eta^{a nu} d/dt^nu_k`` and
  ``3(m+1)!/4 d/ds_{m-1}``
* ``eps^2``: ``(-1)^{d2+1} ([P_m(mu~-d2, R~)]_{m-1-d1-d2})^N_a eta^{a nu} d/ds_{d1} d/dt^nu_{d2}``.

The ``a = N`` part of the first two open blocks is ``R~``-free: it is the
``delta_{m,-1} eps^-1 s`` term and the ladder ``(d+m+1)!/d! s_d d/ds_{d+m}``;
the builder computes it from the general formula and asserts the closed form.

Tables indexed by an unbounded descendent index (the ``t~ d`` blocks) are
materialised for ``t~``-index ``<= window``; all other tables are finite and
their support follows from the projectors: ``[X]_p`` vanishes unless ``p`` is
a difference ``q^a - q^b``.

Genus-0 residuals use ``d e^X = (eps^-2 dF + eps^-1 dF^o) e^X`` with
``X = eps^-2 F + eps^-1 F^o``; a second derivative contributes the product of
first derivatives plus the second derivative of ``X``.

Commutators are computed in the normal-ordered Weyl algebra, where

    (x^A d^B)(x^C d^D) = sum_K K! binom(B, K) binom(C, K) x^{A+C-K} d^{B+D-K}

(multi-index notation), and independently by applying both orderings to a
basis of polynomials of degree ``<= 2``.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from gmpy2 import mpq

from . import linalg
from .calibration import Calibration, DepthError, OpenCalibration
from .hierarchy import DescSeries, TopSolution, descendent_vector_potentials
from .linalg import Matrix
from .model import ModelError, ResidualReport
from .series import DimensionError, Jet, Q

__all__ = [
    "VirasoroError",
    "WindowError",
    "Var",
    "VirasoroOp",
    "ResidualSeries",
    "pm_matrix",
    "pm_normal_ordered",
    "bracket_p",
    "rising",
    "build_closed",
    "build_open",
    "build_closed_from_data",
    "build_open_from_data",
    "closed_residual",
    "open_residual",
    "genus0_coefficient",
    "flat_f_residual",
    "lambda_samples",
    "c_mn",
    "c_mn_residuals",
    "last_group_coefficients",
    "support_soundness",
    "weyl_element",
    "weyl_product",
    "weyl_commutator",
    "apply_operator",
    "commutator_check",
    "commutator_check_monomial",
    "commutator_suite",
    "rspin_operator_closed_form",
    "point_open_operator_closed_form",
    "normal_form_difference",
]

Var = Tuple[int, int]
Mono = Tuple[Var, ...]
WeylKey = Tuple[int, Mono, Mono]

_HALF = mpq(1, 2)


class VirasoroError(ModelError):
    """Raised when an operator cannot be built from the given data."""


class WindowError(ValueError):
    """Raised when a commutator window is too small for the levels involved."""


# ---------------------------------------------------------------------------
# matrices P_m(A, R) and projections
# ---------------------------------------------------------------------------

def _check_square(A: Sequence[Sequence[mpq]], R: Sequence[Sequence[mpq]]) -> int:
    n = len(A)
    if any(len(r) != n for r in A) or len(R) != n or any(len(r) != n for r in R):
        raise DimensionError("P_m needs square matrices of equal size")
    return n


def pm_matrix(A: Sequence[Sequence[object]], R: Sequence[Sequence[object]], m: int) -> Matrix:
    """``P_{-1} = Id``, ``P_{m+1} = R P_m + P_m (A + m + 1/2)``."""
    if m < -1:
        raise ValueError("P_m is defined for m >= -1")
    A = linalg.freeze(A)
    R = linalg.freeze(R)
    n = _check_square(A, R)
    I = linalg.identity(n)
    P = I
    for k in range(-1, m):
        shifted = linalg.mat_add(A, linalg.mat_scale(I, k + _HALF))
        P = linalg.mat_add(linalg.mat_mul(R, P), linalg.mat_mul(P, shifted))
    return P


def pm_normal_ordered(A: Sequence[Sequence[object]], R: Sequence[Sequence[object]], m: int) -> Matrix:
    """``:prod_{i=0}^m (R + A + i - 1/2):`` with every ``R`` moved to the left.

    Expands the product over the subsets of factors contributing ``R``; the
    remaining factors ``A + i - 1/2`` commute with each other.
    """
    if m < -1:
        raise ValueError("P_m is defined for m >= -1")
    A = linalg.freeze(A)
    R = linalg.freeze(R)
    n = _check_square(A, R)
    I = linalg.identity(n)
    idx = list(range(m + 1))
    acc = linalg.zeros(n)
    for k in range(len(idx) + 1):
        Rk = I
        for _ in range(k):
            Rk = linalg.mat_mul(R, Rk)
        for S in itertools.combinations(idx, k):
            term = Rk
            for i in idx:
                if i not in S:
                    term = linalg.mat_mul(term, linalg.mat_add(A, linalg.mat_scale(I, i - _HALF)))
            acc = linalg.mat_add(acc, term)
    return acc


def bracket_p(A: Sequence[Sequence[object]], q: Sequence[object], p: int) -> Matrix:
    """Keep the entries ``A^a_b`` with ``q^a - q^b = p``."""
    A = linalg.freeze(A)
    q = [Q(x) for x in q]
    if len(A) != len(q) or any(len(r) != len(q) for r in A):
        raise DimensionError("bracket_p: matrix and grading vector sizes differ")
    return tuple(tuple(A[a][b] if q[a] - q[b] == p else mpq(0) for b in range(len(q)))
                 for a in range(len(q)))


def rising(x, n: int) -> mpq:
    """Rising factorial ``x (x+1) ... (x+n-1)``; ``1`` for ``n = 0``."""
    x = Q(x)
    out = mpq(1)
    for i in range(n):
        out *= x + i
    return out


def _differences(q: Sequence[mpq]) -> List[int]:
    """Integer values of ``q^a - q^b``: the only ``p`` with ``[X]_p`` possibly non-zero."""
    out = set()
    for a in q:
        for b in q:
            d = a - b
            if d.denominator == 1:
                out.add(int(d))
    return sorted(out)


class _PmCache:
    """``P_m(mu + shift, R)`` for a fixed ``m``, cached by shift."""

    def __init__(self, mu: Sequence[mpq], R: Matrix, q: Sequence[mpq], m: int):
        self.mu = tuple(mu)
        self.R = R
        self.q = tuple(q)
        self.m = m
        self._cache: Dict[int, Matrix] = {}
        self.ps = _differences(self.q)

    def __call__(self, shift: int, p: int) -> Matrix:
        if shift not in self._cache:
            A = linalg.diag([x + shift for x in self.mu])
            self._cache[shift] = pm_matrix(A, self.R, self.m)
        return bracket_p(self._cache[shift], self.q, p)

    def p_range(self, slack: int = 0) -> range:
        return range(min(self.ps) - slack, max(self.ps) + slack + 1)


# ---------------------------------------------------------------------------
# operator tables
# ---------------------------------------------------------------------------

@dataclass
class VirasoroOp:
    """Coefficient tables of a closed (``L_m``) or open (``L~_m``) operator.

    Each table maps index tuples to the exact coefficient of one normal-ordered
    term (both orders of symmetric pairs are stored separately, so a table
    is read as a plain sum):

    ``c[(i, j)]``: ``eps^-2 t~_i t~_j``; ``b[(i, j)]``: ``t~_i d_j``;
    ``a[(i, j)]``: ``eps^2 d_i d_j``; ``d[i]``: ``eps^-1 t~_i`` (``i`` closed);
    ``lin_s[i]``: ``eps^-1 s_p``; ``e[(i, k)]``: ``t~_i d/ds_k`` (``i`` closed);
    ``ladder[(d, k)]``: ``s_d d/ds_k``; ``f[i]``: ``eps d_i``;
    ``tail[k]``: ``eps d/ds_k``; ``g[(k, i)]``: ``eps^2 d/ds_k d_i``.
    """

    m: int
    N: int
    is_open: bool
    window: int
    mu: Tuple[mpq, ...]
    q: Tuple[mpq, ...]
    base_norm: Tuple[mpq, ...]
    c: Dict[Tuple[Var, Var], mpq] = field(default_factory=dict)
    b: Dict[Tuple[Var, Var], mpq] = field(default_factory=dict)
    a: Dict[Tuple[Var, Var], mpq] = field(default_factory=dict)
    const0: mpq = mpq(0)
    d: Dict[Var, mpq] = field(default_factory=dict)
    lin_s: Dict[Var, mpq] = field(default_factory=dict)
    e: Dict[Tuple[Var, int], mpq] = field(default_factory=dict)
    ladder: Dict[Tuple[int, int], mpq] = field(default_factory=dict)
    const_o: mpq = mpq(0)
    f: Dict[Var, mpq] = field(default_factory=dict)
    tail: Dict[int, mpq] = field(default_factory=dict)
    g: Dict[Tuple[int, Var], mpq] = field(default_factory=dict)
    support: Dict[str, object] = field(default_factory=dict)
    mu_tilde: Tuple[mpq, ...] = ()
    q_tilde: Tuple[mpq, ...] = ()

    @property
    def s_index(self) -> int:
        return self.N

    @property
    def constant(self) -> mpq:
        return self.const0 + self.const_o

    def terms(self) -> Iterable[Tuple[int, Mono, Mono, mpq]]:
        """All terms as ``(eps weight, t~ variables, derivative variables, coefficient)``."""
        s = self.N
        for (i, j), v in self.c.items():
            yield -2, (i, j), (), v
        for (i, j), v in self.b.items():
            yield 0, (i,), (j,), v
        for (i, j), v in self.a.items():
            yield 2, (), (i, j), v
        if self.const0:
            yield 0, (), (), self.const0
        for i, v in self.d.items():
            yield -1, (i,), (), v
        for i, v in self.lin_s.items():
            yield -1, (i,), (), v
        for (i, k), v in self.e.items():
            yield 0, (i,), ((s, k),), v
        for (dd, k), v in self.ladder.items():
            yield 0, ((s, dd),), ((s, k),), v
        if self.const_o:
            yield 0, (), (), self.const_o
        for i, v in self.f.items():
            yield 1, (), (i,), v
        for k, v in self.tail.items():
            yield 1, (), ((s, k),), v
        for (k, i), v in self.g.items():
            yield 2, (), ((s, k), i), v

    def normal_form(self, max_index: Optional[int] = None) -> Dict[WeylKey, mpq]:
        """Merged normal-ordered coefficients, optionally restricted to ``p <= max_index``."""
        return weyl_element(self, max_index)

    def table_dict(self) -> Dict[str, object]:
        """Deterministic plain serialisation (rationals as strings)."""
        def var(v):
            return "%d,%d" % (v[0] + 1, v[1])

        def pair(k):
            return ";".join(var(x) if isinstance(x, tuple) else str(x) for x in k)

        def tab(t, keyfn):
            return {keyfn(k): str(v) for k, v in sorted(t.items()) if v}

        out: Dict[str, object] = {
            "m": self.m,
            "N": self.N,
            "open": self.is_open,
            "window": self.window,
            "mu": [str(x) for x in self.mu],
            "c": tab(self.c, pair),
            "b": tab(self.b, pair),
            "a": tab(self.a, pair),
            "const0": str(self.const0),
            "support": {k: (list(v) if isinstance(v, (tuple, list)) else v) for k, v in sorted(self.support.items())},
        }
        if self.is_open:
            out.update({
                "mu_tilde": [str(x) for x in self.mu_tilde],
                "d": tab(self.d, var),
                "lin_s": tab(self.lin_s, var),
                "e": tab(self.e, pair),
                "ladder": tab(self.ladder, pair),
                "const_o": str(self.const_o),
                "f": tab(self.f, var),
                "tail": tab(self.tail, str),
                "g": tab(self.g, pair),
            })
        return out


def _add(t: Dict, key, v: mpq):
    if v:
        t[key] = t.get(key, mpq(0)) + v
        if not t[key]:
            del t[key]


def build_closed_from_data(mu: Sequence[object], R: Sequence[Sequence[object]], q: Sequence[object],
                           eta: Sequence[Sequence[object]], m: int, window: int,
                           base_norm: Sequence[object] = (), slack: int = 0) -> VirasoroOp:
    """Closed tables from ``(mu, R, q, eta)``.

    ``slack`` widens the projector ranges beyond the provable support (used
    by :func:`support_soundness`).
    """
    if m < -1:
        raise ValueError("Virasoro operators are indexed by m >= -1")
    mu = tuple(Q(x) for x in mu)
    q = tuple(Q(x) for x in q)
    R = linalg.freeze(R)
    eta = linalg.freeze(eta)
    eta_inv = linalg.inverse(eta)
    N = len(mu)
    P = _PmCache(mu, R, q, m)
    pr = P.p_range(slack)
    op = VirasoroOp(m=m, N=N, is_open=False, window=window, mu=mu, q=q,
                    base_norm=tuple(Q(x) for x in base_norm) or tuple(mpq(0) for _ in range(N)))
    # eps^-2: m + d1 + d2 + 1 = p in the projector range
    c_max = max(-1, max(pr) - m - 1)
    for s in range(c_max + 1):
        for d1 in range(s + 1):
            d2 = s - d1
            X = P(d2 + 1, m + d1 + d2 + 1)
            for al in range(N):
                for be in range(N):
                    v = sum((X[nu][be] * eta[al][nu] for nu in range(N)), mpq(0))
                    _add(op.c, ((al, d1), (be, d2)), v * _HALF * (-1) ** d1)
    # eps^0: t~^a_d d/dt^b_k with p = m + d - k in range, 0 <= k <= m + d
    for dd in range(window + 1):
        for k in range(max(0, m + dd - max(pr)), m + dd - min(pr) + 1):
            if k < 0 or k > m + dd:
                continue
            X = P(dd + 1, m + dd - k)
            for al in range(N):
                for be in range(N):
                    _add(op.b, ((al, dd), (be, k)), X[be][al])
    # eps^2: d1 + d2 <= m - 1
    for d1 in range(max(0, m)):
        for d2 in range(m - d1):
            X = P(-d2, m - 1 - d1 - d2)
            for al in range(N):
                for be in range(N):
                    v = sum((X[al][nu] * eta_inv[nu][be] for nu in range(N)), mpq(0))
                    _add(op.a, ((al, d1), (be, d2)), v * _HALF * (-1) ** (d2 + 1))
    if m == 0:
        op.const0 = sum((mpq(1, 4) - x * x for x in mu), mpq(0)) / 4
    op.support = {
        "projector_p": (min(pr), max(pr)),
        "c_index_sum_max": c_max,
        "a_index_sum_max": m - 1,
        "b_t_index_max": window,
        "b_shift": (m - max(pr), m - min(pr)),
    }
    return op


def _frobenius_check(cal: Calibration):
    if cal.model.eta is None or not cal.frobenius_symmetric:
        raise VirasoroError("closed Virasoro operators need an eta-symmetric Frobenius calibration")
    if cal.delta is None:
        raise VirasoroError("closed Virasoro operators need a conformal dimension")


def build_closed(cal: Calibration, m: int, window: Optional[int] = None) -> VirasoroOp:
    """``L_m`` of a conformal Frobenius manifold with the given calibration."""
    _frobenius_check(cal)
    window = max(cal.model.truncation.P_max, 0) if window is None else window
    return build_closed_from_data(cal.mu(), cal.R_sum, cal.q, cal.model.eta, m, window, cal.base_norm)


def build_open_from_data(closed: VirasoroOp, mu_t: Sequence[object], R_t: Sequence[Sequence[object]],
                         q_t: Sequence[object], eta: Sequence[Sequence[object]],
                         base_norm_ext: Sequence[object] = (), slack: int = 0) -> VirasoroOp:
    """Add the open tables to a closed operator from the extended data ``(mu~, R~, q~)``."""
    m = closed.m
    window = closed.window
    N = closed.N
    N1 = N + 1
    s = N
    mu_t = tuple(Q(x) for x in mu_t)
    q_t = tuple(Q(x) for x in q_t)
    R_t = linalg.freeze(R_t)
    if len(mu_t) != N1 or len(q_t) != N1 or len(R_t) != N1:
        raise DimensionError("extended data must have dimension N + 1")
    eta_inv = linalg.inverse(linalg.freeze(eta))
    P = _PmCache(mu_t, R_t, q_t, m)
    pr = P.p_range(slack)
    op = VirasoroOp(m=m, N=N, is_open=True, window=window, mu=closed.mu, q=closed.q,
                    base_norm=tuple(Q(x) for x in base_norm_ext) or closed.base_norm + (mpq(0),),
                    c=dict(closed.c), b=dict(closed.b), a=dict(closed.a), const0=closed.const0,
                    support=dict(closed.support), mu_tilde=mu_t, q_tilde=q_t)
    # eps^-1: p = m + d + 1
    d_max = max(-1, max(pr) - m - 1)
    for dd in range(d_max + 1):
        X = P(dd + 1, m + dd + 1)
        for al in range(N1):
            v = X[s][al]
            if al < N:
                _add(op.d, (al, dd), v)
            else:
                _add(op.lin_s, (s, dd), v)
    # eps^0: t~^a_d d/ds_k, 0 <= k <= m + d
    for dd in range(window + 1):
        for k in range(max(0, m + dd - max(pr)), m + dd - min(pr) + 1):
            if k < 0 or k > m + dd:
                continue
            X = P(dd + 1, m + dd - k)
            for al in range(N1):
                v = X[s][al]
                if al < N:
                    _add(op.e, ((al, dd), k), v)
                else:
                    _add(op.ladder, (dd, k), v)
    if m == 0:
        op.const_o = mpq(3, 4)
    # eps^1
    for k in range(0, m + 1):
        X = P(-k, m - k)
        for nu in range(N):
            v = sum((X[s][al] * eta_inv[al][nu] for al in range(N)), mpq(0))
            _add(op.f, (nu, k), v * (-1) ** (k + 1))
    if m >= 1:
        op.tail[m - 1] = mpq(3 * math.factorial(m + 1), 4)
    # eps^2
    for d1 in range(max(0, m)):
        for d2 in range(m - d1):
            X = P(-d2, m - 1 - d1 - d2)
            for nu in range(N):
                v = sum((X[s][al] * eta_inv[al][nu] for al in range(N)), mpq(0))
                _add(op.g, (d1, (nu, d2)), v * (-1) ** (d2 + 1))
    # the boundary-coordinate part is R~-free
    want_lin = {(s, 0): mpq(1)} if m == -1 else {}
    want_ladder = {(dd, m + dd): mpq(math.factorial(dd + m + 1), math.factorial(dd))
                   for dd in range(window + 1) if m + dd >= 0}
    if op.lin_s != want_lin or op.ladder != want_ladder:
        raise VirasoroError("boundary-coordinate entries of the open operator are not R~-free "
                            "(is R~^a_{N+1} = 0 and mu~^{N+1} = 1/2?)")
    op.support.update({
        "open_projector_p": (min(pr), max(pr)),
        "d_index_max": d_max,
        "e_t_index_max": window,
        "f_index_max": m,
        "g_index_sum_max": m - 1,
    })
    return op


def build_open(ocal: OpenCalibration, m: int, window: Optional[int] = None) -> VirasoroOp:
    """``L~_m`` for an open calibration; ``ocal.base`` supplies the closed part."""
    base = ocal.base
    if base is None:
        raise VirasoroError("the open operator needs the base calibration")
    closed = build_closed(base, m, window)
    return build_open_from_data(closed, ocal.mu_tilde, _sum_matrices(ocal.R_tilde, ocal.ext.N),
                                ocal.ext.q, base.model.eta, ocal.ext.base_norm)


def _sum_matrices(ms: Sequence[Matrix], n: int) -> Matrix:
    acc = linalg.zeros(n)
    for x in ms:
        acc = linalg.mat_add(acc, x)
    return acc


def support_soundness(build: Callable[[int], VirasoroOp], slack: int = 2) -> ResidualReport:
    """Widening every projector range by ``slack`` adds only zero entries."""
    a = build(0)
    b = build(slack)
    na = a.normal_form()
    nb = b.normal_form()
    extra = {k: v for k, v in nb.items() if na.get(k) != v}
    missing = {k: v for k, v in na.items() if k not in nb}
    ok = not extra and not missing
    loc = None
    if not ok:
        k = sorted(extra or missing)[0]
        loc = (_key_str(k), str((extra or missing)[k]))
    return ResidualReport("support soundness m=%d" % a.m, 0, ok, loc, {"slack": slack})


# ---------------------------------------------------------------------------
# printed closed forms (rising factorials)
# ---------------------------------------------------------------------------

def rspin_operator_closed_form(r: int, m: int, window: int, is_open: bool = False) -> Dict[WeylKey, mpq]:
    """Normal form of the r-spin operators written with rising factorials.

    Closed part:
    ``sum (a/r + d)^(m+1 rising) t~^a_d d/dt^a_{d+m}
      + eps^2/2 sum_{a+b=r, d1+d2=m-1} (a/r)^(d1+1) (b/r)^(d2+1) d/dt^a_{d1} d/dt^b_{d2}
      + delta_{m,-1} eps^-2/2 sum_{a+b=r} t^a_0 t^b_0 + delta_{m,0} (r^2-1)/(24 r)``,
    with ``t^a`` (``1 <= a <= r-1``) stored at index ``a - 1``.  The open
    version adds the ladder ``(d+m+1)!/d! s_d d/ds_{d+m}``, the tail
    ``eps 3(m+1)!/4 d/ds_{m-1}``, ``delta_{m,-1} eps^-1 s`` and
    ``delta_{m,0} 3/4`` with ``s = t^r``.
    """
    out: Dict[WeylKey, mpq] = {}
    N = r - 1

    def put(key, v):
        key = (key[0], tuple(sorted(key[1])), tuple(sorted(key[2])))
        _add(out, key, Q(v))

    for al in range(1, r):
        for dd in range(window + 1):
            if dd + m >= 0:
                put((0, ((al - 1, dd),), ((al - 1, dd + m),)), rising(mpq(al, r) + dd, m + 1))
    for al in range(1, r):
        be = r - al
        for d1 in range(0, m):
            d2 = m - 1 - d1
            put((2, (), ((al - 1, d1), (be - 1, d2))),
                _HALF * rising(mpq(al, r), d1 + 1) * rising(mpq(be, r), d2 + 1))
    if m == -1:
        for al in range(1, r):
            put((-2, ((al - 1, 0), (r - al - 1, 0)), ()), _HALF)
    if m == 0:
        put((0, (), ()), mpq(r * r - 1, 24 * r))
    if is_open:
        s = N
        for dd in range(window + 1):
            if dd + m >= 0:
                put((0, ((s, dd),), ((s, dd + m),)), mpq(math.factorial(dd + m + 1), math.factorial(dd)))
        if m >= 1:
            put((1, (), ((s, m - 1),)), mpq(3 * math.factorial(m + 1), 4))
        if m == -1:
            put((-1, ((s, 0),), ()), 1)
        if m == 0:
            put((0, (), ()), mpq(3, 4))
    return out


def point_open_operator_closed_form(closed: VirasoroOp) -> Dict[WeylKey, mpq]:
    """Normal form of ``L^pt_m + eps^-1 delta_{m,-1} s + sum (i+m+1)!/i! s_i d/ds_{m+i}
    + delta_{m,0} 3/4 + eps 3(m+1)!/4 d/ds_{m-1}`` given the closed ``L^pt_m``."""
    m = closed.m
    out = dict(closed.normal_form())
    s = closed.N

    def put(key, v):
        _add(out, key, Q(v))

    if m == -1:
        put((-1, ((s, 0),), ()), 1)
    for i in range(closed.window + 1):
        if i + m >= 0:
            put((0, ((s, i),), ((s, m + i),)), mpq(math.factorial(i + m + 1), math.factorial(i)))
    if m == 0:
        put((0, (), ()), mpq(3, 4))
    if m >= 1:
        put((1, (), ((s, m - 1),)), mpq(3 * math.factorial(m + 1), 4))
    return out


def _key_str(k: WeylKey) -> str:
    w, xs, ds = k
    parts = ["eps^%d" % w] if w else []
    parts += ["t~%d_%d" % (a + 1, p) for a, p in xs]
    parts += ["d%d_%d" % (a + 1, p) for a, p in ds]
    return "*".join(parts) or "1"


def normal_form_difference(name: str, A: Dict[WeylKey, mpq], B: Dict[WeylKey, mpq]) -> ResidualReport:
    """Entry-for-entry comparison of two normal forms."""
    keys = sorted(set(A) | set(B))
    bad = [(k, A.get(k, mpq(0)) - B.get(k, mpq(0))) for k in keys if A.get(k, mpq(0)) != B.get(k, mpq(0))]
    loc = (_key_str(bad[0][0]), str(bad[0][1])) if bad else None
    return ResidualReport(name, 0, not bad, loc, {"entries": len(keys), "mismatches": len(bad)})


# ---------------------------------------------------------------------------
# genus-0 residuals
# ---------------------------------------------------------------------------

@dataclass
class ResidualSeries:
    """A residual series with its provenance."""

    name: str
    series: DescSeries
    data: Dict[str, object] = field(default_factory=dict)

    @property
    def jet(self) -> Jet:
        return self.series.jet

    @property
    def is_zero(self) -> bool:
        return self.series.jet.first_nonzero() is None

    def report(self) -> ResidualReport:
        return ResidualReport.from_jet(self.name, self.series.jet, **self.data)


class _DerivCache:
    def __init__(self, S: Optional[DescSeries]):
        self.S = S
        self.lay = None if S is None else S.layout
        self._d1: Dict[Var, Jet] = {}
        self._d2: Dict[Tuple[Var, Var], Jet] = {}

    def _check(self, v: Var):
        if v[1] > self.lay.P_ext:
            raise DepthError("derivative in %s needs descendent index %d, layout has %d"
                             % (self.lay.label(*v) if v[0] < self.lay.N else v, v[1], self.lay.P_ext))

    def d1(self, v: Var) -> Optional[Jet]:
        if self.S is None or v[0] >= self.lay.N:
            return None
        if v not in self._d1:
            self._check(v)
            self._d1[v] = self.S.jet.diff(self.lay.idx(*v))
        return self._d1[v]

    def d2(self, u: Var, v: Var) -> Optional[Jet]:
        if self.S is None or u[0] >= self.lay.N or v[0] >= self.lay.N:
            return None
        key = (min(u, v), max(u, v))
        if key not in self._d2:
            self._check(u)
            self._check(v)
            if u[1] > self.lay.P and v[1] > self.lay.P:
                raise DepthError("second derivative in two first-order-only variables %s, %s" % (u, v))
            d = self.d1(key[0])
            self._d2[key] = d.diff(self.lay.idx(*key[1]))
        return self._d2[key]


def _mul(a: Optional[Jet], b: Optional[Jet]) -> Optional[Jet]:
    if a is None or b is None:
        return None
    return a * b


def genus0_coefficient(op: VirasoroOp, F: DescSeries, Fo: Optional[DescSeries], order: int) -> DescSeries:
    """``Coef_{eps^order}(Op e^X / e^X)`` with ``X = eps^-2 F + eps^-1 F^o``.

    ``F`` and ``F^o`` must share one layout.  Terms whose ``t~`` factors
    involve first-order-only variables vanish after restriction and are
    skipped; the result is restricted to ``t^*_{>P} = 0``.
    """
    lay = F.layout
    if Fo is not None and Fo.layout != lay:
        raise ValueError("F and F^o must live on the same layout")
    if op.is_open and lay.N != op.N + 1:
        raise ValueError("open operators act on the extended layout")
    ring = lay.ring
    c = op.base_norm
    dF = _DerivCache(F)
    dO = _DerivCache(Fo)
    tt_cache: Dict[Var, Jet] = {}

    def tt(v: Var) -> Jet:
        if v not in tt_cache:
            tt_cache[v] = lay.t_tilde(v[0], v[1], c)
        return tt_cache[v]

    acc = ring.zero()
    for w, xs, ds, coef in op.terms():
        if any(v[1] > lay.P for v in xs):
            continue
        if any(v[0] >= lay.N for v in xs + ds):
            continue
        pieces: List[Jet] = []
        if not ds:
            if w == order:
                pieces.append(ring.one())
        elif len(ds) == 1:
            (i,) = ds
            if w - 2 == order:
                pieces.append(dF.d1(i))
            if w - 1 == order:
                pieces.append(dO.d1(i))
        else:
            i, j = ds
            if w - 4 == order:
                pieces.append(_mul(dF.d1(i), dF.d1(j)))
            elif w - 3 == order:
                pieces.append(_mul(dF.d1(i), dO.d1(j)))
                pieces.append(_mul(dO.d1(i), dF.d1(j)))
            elif w - 2 == order:
                pieces.append(_mul(dO.d1(i), dO.d1(j)))
                pieces.append(dF.d2(i, j))
            elif w - 1 == order:
                pieces.append(dO.d2(i, j))
        pieces = [p for p in pieces if p is not None]
        if not pieces:
            continue
        term = pieces[0]
        for p in pieces[1:]:
            term = term + p
        for v in xs:
            term = term * tt(v)
        acc = acc + term.scale(coef)
    acc = acc.restrict_zero(lay.extra_vars)
    return DescSeries(lay, acc)


def _level_check(op: VirasoroOp, lay) -> None:
    need = lay.P + max(op.m, 0)
    if lay.P_ext < need:
        raise DepthError("level m=%d needs first-order variables up to index %d, layout has %d"
                         % (op.m, need, lay.P_ext))
    if op.window < lay.P:
        raise DepthError("operator window %d is below the resolved index %d" % (op.window, lay.P))


def closed_residual(op: VirasoroOp, F: DescSeries) -> ResidualSeries:
    """``Coef_{eps^-2}(L_m e^{eps^-2 F}) / e^{eps^-2 F}``."""
    _level_check(op, F.layout)
    if op.is_open:
        raise ValueError("closed_residual expects a closed operator")
    r = genus0_coefficient(op, F, None, -2)
    return ResidualSeries("closed Virasoro m=%d" % op.m, r, {"m": op.m})


def open_residual(op: VirasoroOp, F: DescSeries, Fo: DescSeries) -> Tuple[ResidualSeries, ResidualSeries]:
    """``Coef_{eps^-1}`` of the open action, plus the ``eps^-2`` coefficient of the same expansion."""
    if not op.is_open:
        raise ValueError("open_residual expects an open operator")
    _level_check(op, F.layout)
    r1 = genus0_coefficient(op, F, Fo, -1)
    r2 = genus0_coefficient(op, F, Fo, -2)
    return (ResidualSeries("open Virasoro m=%d" % op.m, r1, {"m": op.m}),
            ResidualSeries("open expansion eps^-2 m=%d" % op.m, r2, {"m": op.m}))


# ---------------------------------------------------------------------------
# flat F-manifold identity and the matrices C_{m,n}
# ---------------------------------------------------------------------------

def lambda_samples(configured: Sequence[object], m: int, delta: Optional[mpq]) -> List[mpq]:
    """Sample points for an identity polynomial in ``lam`` of degree ``<= m + 1``.

    Starts from ``(3 - delta)/2`` and the configured values and appends fixed
    rationals until ``m + 2`` distinct points are present.
    """
    pts: List[mpq] = []
    if delta is not None:
        pts.append((3 - Q(delta)) / 2)
    for x in configured:
        x = Q(x)
        if x not in pts:
            pts.append(x)
    k = 1
    while len(pts) < max(3, m + 2):
        x = mpq(k, 7) + mpq(1, 11)
        if x not in pts:
            pts.append(x)
        k += 1
    return pts


def flat_f_residual(cal: Calibration, top: TopSolution, Fv: Dict[Tuple[int, int], DescSeries], m: int,
                    lam) -> List[ResidualSeries]:
    """``A^a_m = sum (-1)^{d2+1} ([P_m(mu-d2, R)]_{m-1-d1-d2})^g_nu Omega^top{}^{a,0}_{g,d1} F^{nu,d2}``.

    Here ``mu = q + lam - 3/2``, ``d1 >= -1`` with ``Omega^{a,0}_{g,-1} = delta``,
    and ``F^{nu,d2}`` for ``d2 < 0`` is ``(-1)^{d2+1} t~^nu_{-d2-1}``.  The
    result is restricted to ``t^*_{>P} = 0``.
    """
    lay = top.layout
    N = cal.N
    lam = Q(lam)
    mu = cal.mu(lam)
    P = _PmCache(mu, cal.R_sum, cal.q, m)
    pr = P.p_range()
    lo_d2 = -(lay.P + 1)
    hi_d2 = m - min(pr)  # d1 = -1
    ring = lay.ring
    acc = [ring.zero() for _ in range(N)]
    omega_cache: Dict[Tuple[int, int, int], Jet] = {}

    def om(al, g, d1):
        if d1 == -1:
            return ring.one() if al == g else None
        key = (al, g, d1)
        if key not in omega_cache:
            omega_cache[key] = top.at_top(cal.lower(d1).entries[al][g])
        return omega_cache[key]

    for d2 in range(lo_d2, hi_d2 + 1):
        for p in pr:
            d1 = m - 1 - d2 - p
            if d1 < -1:
                continue
            X = P(-d2, p)
            if linalg.is_zero(X):
                continue
            if d1 > cal.D:
                raise DepthError("A_m needs Omega^0_%d, calibration depth is %d" % (d1, cal.D))
            sign = (-1) ** abs(d2 + 1)
            for g in range(N):
                inner = None
                for nu in range(N):
                    if X[g][nu]:
                        if (nu, d2) not in Fv:
                            raise DepthError("A_m needs the vector potential F^{%d,%d}" % (nu + 1, d2))
                        t = Fv[(nu, d2)].jet.scale(X[g][nu] * sign)
                        inner = t if inner is None else inner + t
                if inner is None:
                    continue
                for al in range(N):
                    o = om(al, g, d1)
                    if o is None or not o.coeffs:
                        continue
                    acc[al] = acc[al] + o * inner
    out = []
    for al in range(N):
        j = acc[al].restrict_zero(lay.extra_vars)
        out.append(ResidualSeries("A^%d_%d (lam=%s)" % (al + 1, m, lam), DescSeries(lay, j),
                                  {"m": m, "lambda": str(lam), "alpha": al + 1}))
    return out


def c_mn(cal: Calibration, m: int, n: int, lam=None):
    """``C_{m,n} = sum_{d1,d2 >= -1} (-1)^{d2+1} Omega^0_{d1} [P_n(mu-d2, R)]_{m-d1-d2} Omega^{d2}_0``."""
    from .series import JetMatrix

    mu = cal.mu(lam)
    P = _PmCache(mu, cal.R_sum, cal.q, n)
    pr = P.p_range()
    ring = cal.ring
    N = cal.N
    acc = JetMatrix.zeros(ring, N)
    for d1 in range(-1, m - min(pr) + 2):
        for p in pr:
            d2 = m - d1 - p
            if d2 < -1:
                continue
            X = P(-d2, p)
            if linalg.is_zero(X):
                continue
            if d1 > cal.D or d2 > cal.D:
                raise DepthError("C_{%d,%d} needs calibration depth %d" % (m, n, max(d1, d2)))
            term = cal.lower(d1) @ JetMatrix.constant(ring, X) @ cal.upper(d2)
            acc = acc + term.scale((-1) ** abs(d2 + 1))
    return acc


def c_mn_residuals(cal: Calibration, m_max: int, lambdas: Sequence[object]) -> List[ResidualReport]:
    reps = []
    for lam in lambdas:
        for m in range(-1, m_max + 1):
            for n in range(-1, m + 1):
                M = c_mn(cal, m, n, lam)
                sub = [ResidualReport.from_jet("C_{%d,%d}[%d,%d]" % (m, n, i + 1, j + 1), M.entries[i][j])
                       for i in range(M.rows) for j in range(M.cols)]
                reps.append(ResidualReport.combine("C_{%d,%d} (lam=%s)" % (m, n, Q(lam)), sub))
    return reps


def last_group_coefficients(ocal: OpenCalibration, m: int) -> Dict[Tuple[int, int], mpq]:
    """Coefficients ``([P_m(mu~-d2, R~)]_{m-1-d1-d2})^{N+1}_{N+1}`` of the boundary group of
    ``A^{N+1}_m`` (``d1 >= -1``, ``d2 >= 0``); all of them vanish because ``mu~^{N+1} = 1/2``."""
    ext = ocal.ext
    s = ext.N - 1
    P = _PmCache(ocal.mu_tilde, _sum_matrices(ocal.R_tilde, ext.N), ext.q, m)
    out = {}
    for d2 in range(0, m + 2 - min(P.p_range())):
        for p in P.p_range():
            d1 = m - 1 - d2 - p
            if d1 < -1:
                continue
            out[(d1, d2)] = P(-d2, p)[s][s]
    return out


# ---------------------------------------------------------------------------
# Weyl algebra: normal-ordered products and commutators
# ---------------------------------------------------------------------------

def _sorted_mono(vs: Iterable[Var]) -> Mono:
    return tuple(sorted(vs))


def weyl_element(op: VirasoroOp, max_index: Optional[int] = None) -> Dict[WeylKey, mpq]:
    out: Dict[WeylKey, mpq] = {}
    for w, xs, ds, v in op.terms():
        if max_index is not None and any(p > max_index for _, p in xs + ds):
            continue
        _add(out, (w, _sorted_mono(xs), _sorted_mono(ds)), v)
    return out


def _contractions(B: Counter, C: Counter):
    """Multi-indices ``K <= min(B, C)`` with weight ``K! binom(B,K) binom(C,K)``."""
    common = sorted(set(B) & set(C))
    ranges = [range(min(B[v], C[v]) + 1) for v in common]
    for ks in itertools.product(*ranges):
        wgt = 1
        K = Counter()
        for v, k in zip(common, ks):
            if k:
                wgt *= math.factorial(k) * math.comb(B[v], k) * math.comb(C[v], k)
                K[v] = k
        yield K, wgt


def weyl_product(X: Dict[WeylKey, mpq], Y: Dict[WeylKey, mpq]) -> Dict[WeylKey, mpq]:
    out: Dict[WeylKey, mpq] = {}
    for (w1, A, B), u in X.items():
        cB = Counter(B)
        for (w2, C, D), v in Y.items():
            cC = Counter(C)
            for K, wgt in _contractions(cB, cC):
                xs = Counter(A) + (cC - K)
                ds = (cB - K) + Counter(D)
                _add(out, (w1 + w2, _sorted_mono(xs.elements()), _sorted_mono(ds.elements())), u * v * wgt)
    return out


def weyl_commutator(X: Dict[WeylKey, mpq], Y: Dict[WeylKey, mpq]) -> Dict[WeylKey, mpq]:
    out = weyl_product(X, Y)
    for k, v in weyl_product(Y, X).items():
        _add(out, k, -v)
    return out


def _in_class(k: WeylKey) -> bool:
    return len(k[1]) + len(k[2]) <= 2


def _restrict(X: Dict[WeylKey, mpq], W: int) -> Dict[WeylKey, mpq]:
    return {k: v for k, v in X.items() if all(p <= W for _, p in k[1] + k[2])}


def _window_need(opA: VirasoroOp, opB: VirasoroOp, window: int) -> int:
    spread = 0
    for op in (opA, opB):
        lo, hi = op.support.get("projector_p", (0, 0))
        spread = max(spread, hi - lo)
        lo, hi = op.support.get("open_projector_p", (0, 0))
        spread = max(spread, hi - lo)
    return window + max(opA.m, opB.m, 0) + spread + 1


def commutator_check(opA: VirasoroOp, opB: VirasoroOp, expected: VirasoroOp, window: int,
                     name: Optional[str] = None) -> Tuple[ResidualReport, Dict[WeylKey, mpq]]:
    """Table path: ``[A, B] - (m_A - m_B) expected`` via normal-ordered products,
    compared on the terms whose indices are all ``<= window``."""
    need = _window_need(opA, opB, window)
    if min(opA.window, opB.window) < need or expected.window < window:
        raise WindowError("commutator window %d needs operator windows >= %d (have %d, %d; expected %d)"
                          % (window, need, opA.window, opB.window, expected.window))
    br = weyl_commutator(weyl_element(opA), weyl_element(opB))
    out_of_class = [k for k, v in br.items() if v and not _in_class(k)]
    diff = _restrict(br, window)
    scale = opA.m - opB.m
    for k, v in weyl_element(expected, window).items():
        _add(diff, k, -v * scale)
    name = name or "[L_%d, L_%d] table" % (opA.m, opB.m)
    bad = sorted(diff)
    ok = not bad and not out_of_class
    loc = None
    if out_of_class:
        loc = ("outside operator class: " + _key_str(sorted(out_of_class)[0]), str(br[sorted(out_of_class)[0]]))
    elif bad:
        loc = (_key_str(bad[0]), str(diff[bad[0]]))
    return ResidualReport(name, window, ok, loc, {"window": window, "compared": len(_restrict(br, window))}), \
        _restrict(br, window)


Poly = Dict[Tuple[int, Mono], mpq]


def apply_operator(X: Dict[WeylKey, mpq], f: Poly) -> Poly:
    """Apply a normal-ordered operator to an ``eps``-graded polynomial in the ``t~`` variables."""
    out: Poly = {}
    for (w2, mono), u in f.items():
        cm = Counter(mono)
        for (w1, xs, ds), v in X.items():
            cd = Counter(ds)
            if any(cm[x] < k for x, k in cd.items()):
                continue
            coef = u * v
            rest = Counter(cm)
            for x, k in cd.items():
                coef *= math.perm(cm[x], k)
                rest[x] -= k
            new = rest + Counter(xs)
            _add(out, (w1 + w2, _sorted_mono(new.elements())), coef)
    return out


def _poly_add(a: Poly, b: Poly, s=1) -> Poly:
    out = dict(a)
    for k, v in b.items():
        _add(out, k, v * s)
    return out


def commutator_check_monomial(opA: VirasoroOp, opB: VirasoroOp, expected: VirasoroOp, window: int,
                              nvars: int, name: Optional[str] = None) -> Tuple[ResidualReport, Poly]:
    """Monomial path: ``A(B f) - B(A f) - (m_A - m_B) expected f`` for every monomial ``f``
    of degree ``<= 2`` in the variables with index ``<= window``."""
    need = _window_need(opA, opB, window)
    if min(opA.window, opB.window) < need or expected.window < window:
        raise WindowError("commutator window %d needs operator windows >= %d" % (window, need))
    XA = weyl_element(opA)
    XB = weyl_element(opB)
    XC = weyl_element(expected, window)
    scale = opA.m - opB.m
    vars_ = [(a, p) for p in range(window + 1) for a in range(nvars)]
    basis: List[Mono] = [()]
    basis += [(v,) for v in vars_]
    basis += [tuple(sorted(c)) for c in itertools.combinations_with_replacement(vars_, 2)]
    collected: Poly = {}
    bad = None
    for mono in basis:
        f = {(0, mono): mpq(1)}
        r = _poly_add(apply_operator(XA, apply_operator(XB, f)), apply_operator(XB, apply_operator(XA, f)), -1)
        r = {k: v for k, v in r.items() if all(p <= window for _, p in k[1])}
        for k, v in r.items():
            collected[(k[0], mono + (("->",),) + k[1])] = v
        r = _poly_add(r, apply_operator(XC, f), -scale)
        r = {k: v for k, v in r.items() if all(p <= window for _, p in k[1])}
        if r and bad is None:
            k = sorted(r)[0]
            bad = ("on %s: eps^%d %s" % (_mono_label(mono), k[0], _mono_label(k[1])), str(r[k]))
    name = name or "[L_%d, L_%d] monomial" % (opA.m, opB.m)
    return ResidualReport(name, window, bad is None, bad, {"window": window, "basis": len(basis)}), collected


def _mono_label(mono: Mono) -> str:
    return "*".join("t~%d_%d" % (a + 1, p) for a, p in mono) or "1"


def commutator_suite(build: Callable[[int, int], VirasoroOp], levels: Sequence[int], window: int,
                     nvars: int, paths: Sequence[str] = ("table", "monomial"), label: str = "L") -> List[ResidualReport]:
    """``[X_i, X_j] = (i - j) X_{i+j}`` for all pairs of levels, with a window-stability check.

    ``build(m, W)`` returns the level-``m`` operator with window ``W``.  Every
    comparison is repeated with all windows enlarged by one; the compared
    entries must not change.
    """
    reps = []
    cache: Dict[Tuple[int, int], VirasoroOp] = {}

    def get(m, W):
        if (m, W) not in cache:
            cache[(m, W)] = build(m, W)
        return cache[(m, W)]

    for i in levels:
        for j in levels:
            if j < i:
                continue
            probe_a, probe_b = get(i, 0), get(j, 0)
            W = _window_need(probe_a, probe_b, window)
            for path in paths:
                results = []
                for Wb in (W, W + 1):
                    A, B = get(i, Wb), get(j, Wb)
                    # [X_-1, X_-1] = 0: the expected operator enters with factor zero
                    C = get(i + j, Wb) if i + j >= -1 else A
                    if path == "table":
                        rep, data = commutator_check(A, B, C, window, "[%s_%d, %s_%d] table" % (label, i, label, j))
                    else:
                        rep, data = commutator_check_monomial(A, B, C, window, nvars,
                                                              "[%s_%d, %s_%d] monomial" % (label, i, label, j))
                    results.append((rep, data))
                (r0, d0), (r1, d1) = results
                stable = d0 == d1
                rep = ResidualReport(r0.name, window, r0.is_zero and r1.is_zero and stable,
                                     r0.first_nonzero or r1.first_nonzero or
                                     (None if stable else ("window stability", "entries changed")),
                                     dict(r0.data, operator_window=W, stable=stable))
                reps.append(rep)
    return reps
