"""Topological solution of the principal hierarchy and descendent potentials.

Descendent series live in one truncated ring whose variables are ``t^a_p``
(``0 <= p <= P_ext``).  Three gradings bound what is stored:

* total degree (all variables weight one), capped by the jet order of the
  calibration;
* the descendent degree (variables with ``p >= 1``), capped by ``G``;
* variables with ``P < p <= P_ext`` are kept only to first order.  They are
  needed for the first derivatives ``d/dt^a_k`` with ``k > P`` that appear in
  the Virasoro and recursion identities, evaluated at ``t^*_{>P} = 0``.

The slot variables ``t^a_0`` are offset coordinates: ``t^a_0 = c^a + x^a``
with ``c^a = Omega^{a,0}_{1,0}`` at the base point, so that after the change
of coordinates ``Omega^{a,0}_{1,0} = t^a``.  Evaluation of a function of the
slot variables on the solution ``v = c + w`` is a Taylor shift by
``h = w - x``, which has positive total and descendent order, so it
terminates inside the ring.

The solution is the fixed point

    v^a = t^a_0 + sum_{g,d >= 0} Omega^{a,0}_{g,d}(v) t^g_{d+1},

equivalently ``w = x + (c + w) t^1_1 + Psi(w)`` where ``Psi`` collects the
terms with ``(g, d) != (1, 0)``; each iteration fixes one more descendent
degree.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from gmpy2 import mpq

from . import linalg
from .calibration import Calibration, DepthError, OpenCalibration
from .model import ModelError, ResidualReport, _Derivs
from .series import Jet, JetMatrix, Ring, embed

__all__ = [
    "DescLayout",
    "DescSeries",
    "TopSolution",
    "topological_solution",
    "omega_pq",
    "omega_pq_residuals",
    "descendent_potential",
    "descendent_vector_potentials",
    "open_descendent_potential",
    "string_dilaton_residuals",
    "trr_residuals",
    "string_equation_residual",
    "restriction_residual",
    "vector_potential_residuals",
    "omega_top_symmetry_residuals",
    "frobenius_cross_check",
    "open_trr_residuals",
    "open_restriction_residual",
    "point_open_reconstruction_residuals",
    "HierarchyError",
]


class HierarchyError(ValueError):
    """Raised on inconsistent truncation requests or failed fixed points."""


@dataclass(frozen=True)
class DescLayout:
    """Variable layout of the descendent ring.

    ``N`` coordinates; indices ``p <= P`` fully resolved (to descendent
    degree ``G``), ``P < p <= P_ext`` to first order; total degree ``<= J``.
    With ``open_var`` the last coordinate is named ``s``.
    """

    N: int
    P: int
    P_ext: int
    G: int
    J: int
    open_var: bool = False

    def __post_init__(self):
        if self.P < 0 or self.P_ext < self.P or self.G < 0 or self.J < 0:
            raise HierarchyError("invalid descendent layout %r" % (self,))

    @property
    def nvars(self) -> int:
        return self.N * (self.P_ext + 1)

    def idx(self, a: int, p: int) -> int:
        if not (0 <= a < self.N and 0 <= p <= self.P_ext):
            raise HierarchyError("variable t^%d_%d outside the layout" % (a + 1, p))
        return p * self.N + a

    def label(self, a: int, p: int) -> str:
        if self.open_var and a == self.N - 1:
            return "s_%d" % p
        return "t%d_%d" % (a + 1, p)

    def var_of(self, i: int) -> Tuple[int, int]:
        return i % self.N, i // self.N

    @functools.cached_property
    def ring(self) -> Ring:
        n = self.nvars
        graded = [0 if i < self.N else 1 for i in range(n)]
        extra = [1 if i // self.N > self.P else 0 for i in range(n)]
        names = [self.label(*self.var_of(i)) for i in range(n)]
        return Ring(n, self.J, [("descendent", graded, self.G), ("extra", extra, 1)], names=names, layout=self)

    def slot_map(self, n: Optional[int] = None) -> List[int]:
        """Embedding of an n-variable calibration ring into the slot variables."""
        n = self.N if n is None else n
        return [self.idx(a, 0) for a in range(n)]

    @property
    def extra_vars(self) -> List[int]:
        return [self.idx(a, p) for p in range(self.P + 1, self.P_ext + 1) for a in range(self.N)]

    @property
    def higher_vars(self) -> List[int]:
        return [self.idx(a, p) for p in range(1, self.P_ext + 1) for a in range(self.N)]

    def t(self, a: int, p: int) -> Jet:
        return self.ring.var(self.idx(a, p))

    def t_tilde(self, a: int, p: int, c: Sequence[mpq] = ()) -> Jet:
        """``t~^a_p = t^a_p - delta^{a,1} delta_{p,1}``; for ``p = 0`` the absolute ``c^a + x^a``."""
        v = self.t(a, p)
        if p == 1 and a == 0:
            return v - 1
        if p == 0 and c:
            return v + c[a]
        return v


@dataclass
class DescSeries:
    """A descendent series: a jet in the descendent ring of ``layout``."""

    layout: DescLayout
    jet: Jet

    @property
    def ring(self) -> Ring:
        return self.layout.ring

    def diff(self, a: int, p: int) -> "DescSeries":
        return DescSeries(self.layout, self.jet.diff(self.layout.idx(a, p)))

    def __add__(self, other: "DescSeries") -> "DescSeries":
        return DescSeries(self.layout, self.jet + other.jet)

    def __sub__(self, other: "DescSeries") -> "DescSeries":
        return DescSeries(self.layout, self.jet - other.jet)

    def restrict_resolved(self) -> "DescSeries":
        """Set the first-order-only variables to zero."""
        return DescSeries(self.layout, self.jet.restrict_zero(self.layout.extra_vars))

    def restrict_slots(self) -> Jet:
        """Restriction to ``t^*_{>=1} = 0`` as a jet in the slot variables."""
        return self.jet.restrict_zero(self.layout.higher_vars)

    def graded_part(self, k: int) -> "DescSeries":
        return DescSeries(self.layout, self.jet.homogeneous_part(k, 1))

    def coefficient_map(self) -> Dict[Tuple[Tuple[int, int, int], ...], Dict[Tuple[int, ...], mpq]]:
        """``{((a, p, exponent), ...) for p >= 1: {slot exponents: coefficient}}``."""
        lay = self.layout
        out: Dict[Tuple[Tuple[int, int, int], ...], Dict[Tuple[int, ...], mpq]] = {}
        for ex, c in self.jet.terms():
            hi = tuple((a, p, ex[lay.idx(a, p)]) for p in range(1, lay.P_ext + 1) for a in range(lay.N)
                       if ex[lay.idx(a, p)])
            slot = tuple(ex[lay.idx(a, 0)] for a in range(lay.N))
            out.setdefault(hi, {})[slot] = c
        return out

    def to_str(self, max_terms: Optional[int] = None) -> str:
        return self.jet.to_str(max_terms)


class _Evaluator:
    """``f(x) -> f(x + h)`` for jets of the descendent ring, shifting the slot variables."""

    def __init__(self, layout: DescLayout, h: Sequence[Jet]):
        self.layout = layout
        self.ring = layout.ring
        self.h = list(h)
        self.slots = layout.slot_map()
        n = len(self.h)
        caps = self.ring.caps
        self._lows = [hj.low for hj in self.h]
        # multi-indices e with h^e not identically zero in the ring
        self.indices: List[Tuple[int, ...]] = []
        self._parent: Dict[Tuple[int, ...], Tuple[Tuple[int, ...], int]] = {}

        def rec(e, start):
            self.indices.append(e)
            for j in range(start, n):
                e2 = list(e)
                e2[j] += 1
                e2 = tuple(e2)
                lows = [sum(x * lw[k] for x, lw in zip(e2, self._lows)) for k in range(self.ring.nfilt)]
                if any(l > cp for l, cp in zip(lows, caps)):
                    continue
                self._parent[e2] = (e, j)
                rec(e2, j)

        rec(tuple([0] * n), 0)
        self._hp: Dict[Tuple[int, ...], Jet] = {tuple([0] * n): self.ring.one()}

    def hpow(self, e: Tuple[int, ...]) -> Jet:
        """``h^e / e!``."""
        r = self._hp.get(e)
        if r is None:
            par, j = self._parent[e]
            r = (self.hpow(par) * self.h[j]).scale(mpq(1, e[j]))
            self._hp[e] = r
        return r

    def __call__(self, f: Jet) -> Jet:
        derivs: Dict[Tuple[int, ...], Jet] = {self.indices[0]: f}
        result = f
        for e in self.indices[1:]:
            par, j = self._parent[e]
            dp = derivs.get(par)
            if dp is None:
                continue
            d = dp.diff(self.slots[j])
            if not d.coeffs and all(v >= c for v, c in zip(d.valid, self.ring.caps)):
                continue  # exactly zero: the whole subtree vanishes
            derivs[e] = d
            result = result + d * self.hpow(e)
        return result


@dataclass
class TopSolution:
    """The topological solution ``v^a = c^a + w^a`` on a descendent layout."""

    layout: DescLayout
    cal: Calibration
    v: List[DescSeries]
    w: List[Jet]
    iterations: int
    evaluator: _Evaluator = field(repr=False)

    @property
    def c(self) -> Tuple[mpq, ...]:
        return self.cal.base_norm

    def emb(self, j: Jet) -> Jet:
        return _embed_cached(self.layout, j)

    def at_top(self, j: Jet) -> Jet:
        """Evaluate a jet of the calibration ring on ``v``."""
        return self.evaluator(self.emb(j))


def _embed_cached(layout: DescLayout, j: Jet) -> Jet:
    return embed(j, layout.ring, layout.slot_map(j.ring.nvars))


def required_depth(P: int, P_ext: int) -> int:
    """Calibration depth used by the descendent potentials on a layout."""
    return P + P_ext


def make_layout(cal: Calibration, P: int, G: int, P_ext: Optional[int] = None, J: Optional[int] = None,
                open_var: bool = False) -> DescLayout:
    P_ext = P if P_ext is None else P_ext
    if J is None:
        J = min(min(u.valid_order for u in cal.upper_list), min(l.valid_order for l in cal.lower_list))
    if P_ext > cal.D + 1:
        raise DepthError("descendent index %d needs calibration depth %d, have %d" % (P_ext, P_ext - 1, cal.D))
    return DescLayout(cal.N, P, P_ext, G, J, open_var)


def topological_solution(cal: Calibration, P_max: int, G_max: int, P_ext: Optional[int] = None,
                         J: Optional[int] = None, open_var: Optional[bool] = None) -> TopSolution:
    """Solve the fixed point for ``v^top`` by descendent-degree induction."""
    if open_var is None:
        open_var = cal.model.mode == "flat_f" and (cal.model.name == "ext" or cal.model.name.endswith(":ext"))
    lay = make_layout(cal, P_max, G_max, P_ext, J, open_var)
    ring = lay.ring
    N = lay.N
    c = cal.base_norm
    xs = [lay.t(a, 0) for a in range(N)]
    t11 = lay.t(0, 1)
    psi = []
    for a in range(N):
        acc = ring.zero()
        for d in range(0, lay.P_ext):
            L = cal.lower(d)
            for g in range(N):
                if d == 0 and g == 0:
                    continue
                acc = acc + _embed_cached(lay, L.entries[a][g]) * lay.t(g, d + 1)
        psi.append(acc)
    w = list(xs)
    ev = None
    for it in range(lay.G + 2):
        ev = _Evaluator(lay, [w[a] - xs[a] for a in range(N)])
        new = [xs[a] + (w[a] + c[a]) * t11 + ev(psi[a]) for a in range(N)]
        stable = all(n.coeffs == o.coeffs for n, o in zip(new, w))
        w = new
        if stable and it > 0:
            break
    else:
        raise HierarchyError("fixed point did not stabilise within %d iterations" % (lay.G + 2))
    ev = _Evaluator(lay, [w[a] - xs[a] for a in range(N)])
    v = [DescSeries(lay, w[a] + c[a]) for a in range(N)]
    return TopSolution(lay, cal, v, w, it + 1, ev)


# ---------------------------------------------------------------------------
# two-index matrices
# ---------------------------------------------------------------------------

def omega_pq(cal: Calibration, p: int, q: int, form: str = "q") -> JetMatrix:
    """``Omega^p_q`` via the alternating sum over ``i <= q`` (or ``i <= p``)."""
    ring = cal.ring
    N = cal.N
    if p == -1 or q == -1:
        other = q if p == -1 else p
        return JetMatrix.identity(ring, N) if other == 0 else JetMatrix.zeros(ring, N)
    if p < -1 or q < -1:
        raise ValueError("negative index")
    if p + q > cal.D:
        raise DepthError("Omega^%d_%d needs depth %d, calibration has %d" % (p, q, p + q, cal.D))
    acc = JetMatrix.zeros(ring, N)
    if form == "q":
        for i in range(q + 1):
            acc = acc + (cal.upper(p + q - i) @ cal.lower(i - 1)).scale((-1) ** (q - i))
    elif form == "p":
        for i in range(p + 1):
            acc = acc + (cal.upper(i - 1) @ cal.lower(p + q - i)).scale((-1) ** (p - i))
    else:
        raise ValueError("form must be 'p' or 'q'")
    return acc


def _mat_reports(name: str, M: JetMatrix) -> ResidualReport:
    reps = [ResidualReport.from_jet("%s[%d,%d]" % (name, i + 1, j + 1), M.entries[i][j])
            for i in range(M.rows) for j in range(M.cols)]
    return ResidualReport.combine(name, reps)


def omega_pq_residuals(cal: Calibration, max_sum: Optional[int] = None) -> List[ResidualReport]:
    """Both alternating sums agree; differential and string identities of ``Omega^p_q``."""
    max_sum = cal.D if max_sum is None else max_sum
    reps = []
    N = cal.N
    for s in range(0, max_sum + 1):
        for p in range(0, s + 1):
            q = s - p
            A = omega_pq(cal, p, q, "q")
            B = omega_pq(cal, p, q, "p")
            reps.append(_mat_reports("Omega^%d_%d two forms" % (p, q), A - B))
            for g in range(N):
                dA = A.diff(g)
                via_lower = cal.upper(p - 1) @ cal.lower(q).diff(g)
                via_upper = cal.upper(p).diff(g) @ cal.lower(q - 1)
                reps.append(_mat_reports("dOmega^%d_%d/dt%d (lower)" % (p, q, g + 1), dA - via_lower))
                reps.append(_mat_reports("dOmega^%d_%d/dt%d (upper)" % (p, q, g + 1), dA - via_upper))
            if s >= 1:
                rhs = omega_pq(cal, p - 1, q) + omega_pq(cal, p, q - 1)
                reps.append(_mat_reports("string Omega^%d_%d" % (p, q), A.diff(0) - rhs))
    return reps


# ---------------------------------------------------------------------------
# descendent potentials
# ---------------------------------------------------------------------------

def _eta_omega(cal: Calibration, p: int, q: int) -> List[List[Jet]]:
    """``Omega_{a,p;b,q} = (eta Omega^p_q)_{ab}``."""
    eta = cal.model.eta
    M = omega_pq(cal, p, q)
    N = cal.N
    ring = cal.ring
    out = []
    for a in range(N):
        row = []
        for b in range(N):
            acc = ring.zero()
            for mu in range(N):
                if eta[a][mu]:
                    acc = acc + M.entries[mu][b].scale(eta[a][mu])
            row.append(acc)
        out.append(row)
    return out


def _pairs(lay: DescLayout):
    """Index pairs ``(p, q)`` with at most one first-order-only index."""
    for p in range(lay.P_ext + 1):
        for q in range(lay.P_ext + 1):
            if p > lay.P and q > lay.P:
                continue
            yield p, q


def descendent_potential(cal: Calibration, top: TopSolution, require_symmetric: bool = True) -> DescSeries:
    """``F = 1/2 sum t~^a_p t~^b_q Omega^top_{a,p;b,q}`` (Frobenius calibrations)."""
    if cal.model.eta is None:
        raise ModelError("the descendent potential needs a metric")
    if require_symmetric and not cal.frobenius_symmetric:
        raise ModelError("calibration is not eta-symmetric: use descendent_vector_potentials")
    lay = top.layout
    ring = lay.ring
    Nl = lay.N
    N = cal.N
    c = top.c
    half = mpq(1, 2)
    need = max(p + q for p, q in _pairs(lay))
    if need > cal.D:
        raise DepthError("descendent potential needs calibration depth %d, have %d" % (need, cal.D))
    omegas = {}

    def om(p, q):
        if (p, q) not in omegas:
            omegas[(p, q)] = [[_embed_cached(lay, j) for j in row] for row in _eta_omega(cal, p, q)]
        return omegas[(p, q)]

    tt = {(a, p): lay.t_tilde(a, p, c) for a in range(N) for p in range(lay.P_ext + 1)}
    # p = q = 0: functions of the slots only
    total = ring.zero()
    O00 = om(0, 0)
    for a in range(N):
        for b in range(N):
            total = total + (tt[(a, 0)] * tt[(b, 0)] * top.evaluator(O00[a][b])).scale(half)
    # exactly one index zero
    for a in range(N):
        K = ring.zero()
        for q in range(1, lay.P_ext + 1):
            O0q = om(0, q)
            Oq0 = om(q, 0)
            for b in range(N):
                K = K + tt[(b, q)] * (O0q[a][b] + Oq0[b][a])
        total = total + (tt[(a, 0)] * top.evaluator(K)).scale(half)
    # both indices positive
    T = ring.zero()
    for p, q in _pairs(lay):
        if p == 0 or q == 0:
            continue
        O = om(p, q)
        for a in range(N):
            for b in range(N):
                if O[a][b].coeffs:
                    T = T + tt[(a, p)] * tt[(b, q)] * O[a][b]
    total = total + top.evaluator(T).scale(half)
    return DescSeries(lay, total)


def descendent_vector_potentials(cal: Calibration, top: TopSolution, p_range: Iterable[int],
                                 resolved_only: bool = False) -> Dict[Tuple[int, int], DescSeries]:
    """``F^{a,p} = sum_q Omega^top{}^{a,p}_{b,q} t~^b_q``; negative ``p`` by convention.

    With ``resolved_only`` the first-order-only variables are set to zero,
    which lowers the calibration depth needed to ``p + P``.
    """
    lay = top.layout
    q_top = lay.P if resolved_only else lay.P_ext
    ring = lay.ring
    N = cal.N
    c = top.c
    out: Dict[Tuple[int, int], DescSeries] = {}
    for p in p_range:
        if p < 0:
            for a in range(N):
                k = -p - 1
                if k > lay.P_ext:
                    raise DepthError("t^%d_%d outside the layout" % (a + 1, k))
                out[(a, p)] = DescSeries(lay, lay.t_tilde(a, k, c).scale((-1) ** abs(p + 1)))
            continue
        if p + q_top > cal.D:
            raise DepthError("F^{a,%d} needs calibration depth %d, have %d" % (p, p + q_top, cal.D))
        mats = {q: omega_pq(cal, p, q) for q in range(q_top + 1)}
        for a in range(N):
            acc = ring.zero()
            for b in range(N):
                acc = acc + lay.t_tilde(b, 0, c) * top.evaluator(_embed_cached(lay, mats[0].entries[a][b]))
            K = ring.zero()
            for q in range(1, q_top + 1):
                for b in range(N):
                    e = mats[q].entries[a][b]
                    if e.coeffs:
                        K = K + _embed_cached(lay, e) * lay.t_tilde(b, q, c)
            acc = acc + top.evaluator(K)
            if resolved_only:
                acc = acc.restrict_zero(lay.extra_vars)
            out[(a, p)] = DescSeries(lay, acc)
    return out


def open_descendent_potential(ocal: OpenCalibration, top_ext: TopSolution) -> DescSeries:
    """``F^o = sum_{d >= 0} t~^a_d Phi^top_{a,d}`` on the extended layout."""
    lay = top_ext.layout
    ring = lay.ring
    N1 = ocal.ext.N
    c = top_ext.c
    if lay.P_ext > ocal.ext.D:
        raise DepthError("open potential needs Phi up to depth %d, have %d" % (lay.P_ext, ocal.ext.D))
    acc = ring.zero()
    for a in range(N1):
        acc = acc + lay.t_tilde(a, 0, c) * top_ext.at_top(ocal.Phi[(a, 0)])
    K = ring.zero()
    for d in range(1, lay.P_ext + 1):
        for a in range(N1):
            ph = ocal.Phi[(a, d)]
            if ph.coeffs:
                K = K + _embed_cached(lay, ph) * lay.t_tilde(a, d, c)
    acc = acc + top_ext.evaluator(K)
    return DescSeries(lay, acc)


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------

def string_dilaton_residuals(top: TopSolution) -> List[ResidualReport]:
    """String and dilaton equations for ``v^top``."""
    lay = top.layout
    c = top.c
    reps = []
    for a, va in enumerate(top.v):
        d = _Derivs(va.jet)
        s = lay.ring.const(1 if a == 0 else 0)
        for g in range(lay.N):
            for k in range(lay.P_ext):
                s = s + lay.t_tilde(g, k + 1, c) * d(lay.idx(g, k))
        reps.append(ResidualReport.from_jet("string v^%d" % (a + 1), s, valid=list(s.valid)))
        dl = lay.ring.zero()
        for g in range(lay.N):
            for k in range(lay.P_ext + 1):
                dl = dl + lay.t_tilde(g, k, c) * d(lay.idx(g, k))
        reps.append(ResidualReport.from_jet("dilaton v^%d" % (a + 1), dl, valid=list(dl.valid)))
        init = va.restrict_slots() - lay.t_tilde(a, 0, c)
        reps.append(ResidualReport.from_jet("v^%d at t_>=1 = 0" % (a + 1), init))
    return reps


def string_equation_residual(F: DescSeries, top: TopSolution, eta) -> ResidualReport:
    """``sum t~^a_{p+1} dF/dt^a_p + 1/2 eta_ab t^a t^b``."""
    lay = top.layout
    c = top.c
    N = len(eta)
    acc = lay.ring.zero()
    for a in range(N):
        for b in range(N):
            if eta[a][b]:
                acc = acc + (lay.t_tilde(a, 0, c) * lay.t_tilde(b, 0, c)).scale(eta[a][b] / 2)
    for a in range(N):
        for p in range(lay.P_ext):
            acc = acc + lay.t_tilde(a, p + 1, c) * F.jet.diff(lay.idx(a, p))
    return ResidualReport.from_jet("string equation", acc, valid=list(acc.valid))


def _deg_bound_report(name: str, jet: Jet, max_deg: int) -> ResidualReport:
    """Report the part of ``jet`` of total degree above ``max_deg``."""
    hi = {k: v for k, v in jet.coeffs.items() if jet.ring.degs(k)[0] > max_deg}
    j = Jet(jet.ring, hi, jet.valid, jet.low)
    return ResidualReport.from_jet(name, j, bound=max_deg)


def restriction_residual(F: DescSeries, top: TopSolution, F0: Jet, max_deg: int = 2) -> ResidualReport:
    """``F|_{t_>=1=0} - F0`` has total degree at most ``max_deg`` in the slots."""
    lay = top.layout
    r = F.restrict_slots() - _embed_cached(lay, F0)
    return _deg_bound_report("restriction minus potential", r, max_deg)


def _index_sample(lay: DescLayout, resolved_only: bool = True, limit: Optional[int] = None):
    top = lay.P if resolved_only else lay.P_ext
    idx = [(a, p) for p in range(top + 1) for a in range(lay.N)]
    if limit is not None and len(idx) > limit:
        step = len(idx) / float(limit)
        idx = [idx[int(i * step)] for i in range(limit)]
    return idx


def trr_residuals(F: DescSeries, top: TopSolution, eta_inv, limit: Optional[int] = None) -> List[ResidualReport]:
    """Topological recursion relations with three derivatives."""
    lay = top.layout
    d = _Derivs(F.jet)
    N = len(eta_inv)
    reps = []
    idx = _index_sample(lay, True, limit)
    for a in range(N):
        for ap in range(lay.P):
            A1 = lay.idx(a, ap + 1)
            A0 = lay.idx(a, ap)
            for i, (b, bp) in enumerate(idx):
                for (g, gp) in idx[i:]:
                    B, C = lay.idx(b, bp), lay.idx(g, gp)
                    lhs = d(A1, B, C)
                    rhs = lay.ring.zero()
                    for mu in range(N):
                        dm = d(A0, lay.idx(mu, 0))
                        if not dm.coeffs:
                            continue
                        for nu in range(N):
                            if eta_inv[mu][nu]:
                                rhs = rhs + (dm * d(lay.idx(nu, 0), B, C)).scale(eta_inv[mu][nu])
                    reps.append(ResidualReport.from_jet(
                        "TRR[%s;%s;%s]" % (lay.label(a, ap + 1), lay.label(b, bp), lay.label(g, gp)), lhs - rhs))
    return reps


def vector_potential_residuals(cal: Calibration, top: TopSolution, Fv: Dict[Tuple[int, int], DescSeries],
                               F0: Optional[Sequence[Jet]] = None) -> List[ResidualReport]:
    """Derivative and string identities of ``F^{a,p}`` and the restriction bound."""
    lay = top.layout
    c = top.c
    reps = []
    N = cal.N
    ps = sorted({p for (_, p) in Fv if p >= 0})
    for p in ps:
        for q in range(lay.P + 1):
            if p + q > cal.D:
                continue
            M = omega_pq(cal, p, q)
            for a in range(N):
                for b in range(N):
                    lhs = Fv[(a, p)].jet.diff(lay.idx(b, q))
                    rhs = top.at_top(M.entries[a][b])
                    reps.append(ResidualReport.from_jet(
                        "dF^{%d,%d}/d%s" % (a + 1, p, lay.label(b, q)), lhs - rhs))
        for a in range(N):
            prev = Fv.get((a, p - 1))
            if prev is None:
                k = -p
                prev = DescSeries(lay, lay.t_tilde(a, k, c).scale((-1) ** p))
            acc = prev.jet
            for b in range(N):
                for q in range(lay.P_ext):
                    acc = acc + lay.t_tilde(b, q + 1, c) * Fv[(a, p)].jet.diff(lay.idx(b, q))
            reps.append(ResidualReport.from_jet("string F^{%d,%d}" % (a + 1, p), acc, valid=list(acc.valid)))
    if F0 is not None and 0 in ps:
        for a in range(N):
            reps.append(restriction_residual(Fv[(a, 0)], top, F0[a], 1))
    return reps


def omega_top_symmetry_residuals(cal: Calibration, top: TopSolution, samples: Sequence[Tuple[int, int, int, int, int, int, int]]
                                 ) -> List[ResidualReport]:
    """``d Omega^top{}^{a,p}_{b,q}/dt^g_r = d Omega^top{}^{a,p}_{g,r}/dt^b_q`` on sampled tuples."""
    lay = top.layout
    reps = []
    for (a, p, b, q, g, r, _) in samples:
        if p + max(q, r) > cal.D:
            continue
        X = top.at_top(omega_pq(cal, p, q).entries[a][b]).diff(lay.idx(g, r))
        Y = top.at_top(omega_pq(cal, p, r).entries[a][g]).diff(lay.idx(b, q))
        reps.append(ResidualReport.from_jet(
            "Omega^top sym [%d,%d;%d,%d;%d,%d]" % (a + 1, p, b + 1, q, g + 1, r), X - Y))
    return reps


def frobenius_cross_check(F: DescSeries, Fv: Dict[Tuple[int, int], DescSeries], eta_inv) -> List[ResidualReport]:
    """``F^{a,p} = eta^{a mu} dF/dt^mu_p``."""
    lay = F.layout
    N = len(eta_inv)
    reps = []
    for (a, p), S in sorted(Fv.items()):
        if p < 0 or a >= N:
            continue
        acc = S.jet
        for mu in range(N):
            if eta_inv[a][mu]:
                acc = acc - F.jet.diff(lay.idx(mu, p)).scale(eta_inv[a][mu])
        reps.append(ResidualReport.from_jet("F^{%d,%d} - eta dF" % (a + 1, p), acc))
    return reps


def open_trr_residuals(F: DescSeries, Fo: DescSeries, eta_inv) -> List[ResidualReport]:
    """Open recursion relations, componentwise along every resolved direction."""
    lay = Fo.layout
    N = len(eta_inv)
    s = lay.N - 1
    dF = _Derivs(F.jet)
    dO = _Derivs(Fo.jet)
    S0 = lay.idx(s, 0)
    dirs = [(g, r) for r in range(lay.P + 1) for g in range(lay.N)]
    reps = []
    for a in range(N):
        for p in range(lay.P_ext):
            A1, A0 = lay.idx(a, p + 1), lay.idx(a, p)
            coef = []
            for nu in range(N):
                acc = lay.ring.zero()
                for mu in range(N):
                    if eta_inv[mu][nu]:
                        acc = acc + dF(A0, lay.idx(mu, 0)).scale(eta_inv[mu][nu])
                coef.append(acc)
            for (g, r) in dirs:
                Gi = lay.idx(g, r)
                lhs = dO(A1, Gi)
                rhs = dO(A0) * dO(S0, Gi)
                for nu in range(N):
                    if coef[nu].coeffs:
                        rhs = rhs + coef[nu] * dO(lay.idx(nu, 0), Gi)
                reps.append(ResidualReport.from_jet(
                    "open TRR1[%s; d/d%s]" % (lay.label(a, p + 1), lay.label(g, r)), lhs - rhs))
    for p in range(lay.P_ext):
        S1, Sp = lay.idx(s, p + 1), lay.idx(s, p)
        for (g, r) in dirs:
            Gi = lay.idx(g, r)
            reps.append(ResidualReport.from_jet(
                "open TRR2[%s; d/d%s]" % (lay.label(s, p + 1), lay.label(g, r)),
                dO(S1, Gi) - dO(Sp) * dO(S0, Gi)))
    return reps


def open_restriction_residual(Fo: DescSeries, top_ext: TopSolution, Fo0: Jet) -> ResidualReport:
    """``F^o|_{t_>=1 = 0, s_>=1 = 0} - F^o`` is at most linear."""
    return restriction_residual(Fo, top_ext, Fo0, 1)


def point_open_reconstruction_residuals(Fo: DescSeries, n_max: int) -> List[ResidualReport]:
    """``dF^o/ds_n = (dF^o/ds)^{n+1} / (n+1)!``."""
    lay = Fo.layout
    s = lay.N - 1
    d1 = Fo.jet.diff(lay.idx(s, 0))
    reps = []
    pw = d1
    for n in range(0, n_max + 1):
        if n > lay.P_ext:
            raise DepthError("s_%d outside the layout" % n)
        if n > 0:
            pw = pw * d1
        res = Fo.jet.diff(lay.idx(s, n)) - pw.scale(mpq(1, math.factorial(n + 1)))
        reps.append(ResidualReport.from_jet("dF^o/ds_%d reconstruction" % n, res, valid=list(res.valid)))
    return reps
