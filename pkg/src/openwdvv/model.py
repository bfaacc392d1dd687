"""Frobenius manifolds, flat F-manifolds and open extensions as exact data.

Coordinates.  Every jet of a model is expanded around its base point: the jet
variable ``x^a`` stands for ``t^a - base^a``.  Potentials in model files and in
the built-in catalogue are written directly in these offset coordinates.  The
Euler field is ``E^a = (1 - q^a) t^a + r^a``; in offset coordinates it reads
``(1 - q^a) x^a + e0^a`` with ``e0 = (1 - q) * base + r``.

Indices are 0-based in code (``t^1`` of the formulas is index 0, the open
variable ``s`` is index ``N``).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from gmpy2 import mpq

from .series import Jet, Q, Ring, exp_form_jet
from . import linalg

__all__ = [
    "ExpTerm",
    "PotentialExpr",
    "EulerData",
    "OpenExt",
    "Truncation",
    "ModelSpec",
    "ResidualReport",
    "ModelError",
    "OpenWDVVError",
    "PreconditionError",
    "model_ring",
    "structure_constants",
    "wdvv_residual",
    "open_wdvv_residual",
    "unit_checks",
    "euler_residual",
    "grading_check",
    "to_flat_f",
    "open_to_extension",
    "canonical_open_solution",
    "canonical_coordinate_residual",
    "ode_residual",
]


class ModelError(ValueError):
    """Malformed model data."""


class PreconditionError(ValueError):
    """An operation's mathematical precondition fails; carries the residuals."""

    def __init__(self, message: str, reports: Sequence["ResidualReport"] = ()):
        super().__init__(message)
        self.reports = list(reports)


class OpenWDVVError(PreconditionError):
    """The open potential does not solve the open WDVV system / unit condition."""


# ---------------------------------------------------------------------------
# potentials as finite exact expressions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpTerm:
    """``coeff * x^prefactor * exp(sum scale_i * x_{var_i})``."""

    coeff: mpq
    exponent: Tuple[Tuple[int, mpq], ...]
    prefactor: Tuple[int, ...]


@dataclass(frozen=True)
class PotentialExpr:
    """Polynomial plus exponential terms with rational data."""

    nvars: int
    monomials: Tuple[Tuple[Tuple[int, ...], mpq], ...] = ()
    exp_terms: Tuple[ExpTerm, ...] = ()

    @staticmethod
    def poly(nvars: int, terms: Dict[Tuple[int, ...], object]) -> "PotentialExpr":
        mons = tuple(sorted((tuple(k), Q(v)) for k, v in terms.items() if Q(v) != 0))
        return PotentialExpr(nvars, mons, ())

    def __post_init__(self):
        for ex, _ in self.monomials:
            if len(ex) != self.nvars or any(e < 0 for e in ex):
                raise ModelError("monomial exponent vector %r does not match %d variables" % (ex, self.nvars))
        for t in self.exp_terms:
            if len(t.prefactor) != self.nvars:
                raise ModelError("exp-term prefactor does not match %d variables" % self.nvars)
            for v, _ in t.exponent:
                if not 0 <= v < self.nvars:
                    raise ModelError("exp-term variable index %d out of range" % v)

    @property
    def is_polynomial(self) -> bool:
        return not self.exp_terms

    def to_jet(self, ring: Ring) -> Jet:
        if ring.nvars != self.nvars:
            raise ModelError("ring has %d variables, potential %d" % (ring.nvars, self.nvars))
        terms: Dict[Tuple[int, ...], mpq] = {}
        for ex, c in self.monomials:
            if sum(ex) <= ring.trunc:
                terms[ex] = terms.get(ex, mpq(0)) + c
        j = ring.from_terms(terms, exact=self.is_polynomial)
        for t in self.exp_terms:
            e = exp_form_jet(t.coeff, t.exponent, ring)
            if any(t.prefactor):
                e = e * ring.monomial(t.prefactor)
            j = j + e
        return j

    def plus(self, other: "PotentialExpr") -> "PotentialExpr":
        if other.nvars != self.nvars:
            raise ModelError("potential dimensions differ")
        acc: Dict[Tuple[int, ...], mpq] = {}
        for ex, c in self.monomials + other.monomials:
            acc[ex] = acc.get(ex, mpq(0)) + c
        mons = tuple(sorted((k, v) for k, v in acc.items() if v != 0))
        return PotentialExpr(self.nvars, mons, self.exp_terms + other.exp_terms)


@dataclass(frozen=True)
class EulerData:
    q: Tuple[mpq, ...]
    r: Tuple[mpq, ...]
    delta: mpq

    def e0(self, base: Sequence[mpq]) -> Tuple[mpq, ...]:
        """Euler field components at the base point."""
        return tuple((1 - q) * b + r for q, b, r in zip(self.q, base, self.r))


@dataclass(frozen=True)
class OpenExt:
    """Open potential ``F^o(t^1..t^N, s)`` in offset coordinates."""

    Fo: PotentialExpr
    r_extra: mpq = mpq(0)
    s_base: mpq = mpq(0)


@dataclass(frozen=True)
class Truncation:
    jet_order: int = 8
    D: int = 6
    P_max: int = 3
    G_max: int = 3
    m_max: int = 3
    lambdas: Tuple[mpq, ...] = ()


@dataclass(frozen=True)
class ModelSpec:
    """A Frobenius manifold (``eta`` + scalar potential) or a flat F-manifold
    (vector potential), optionally conformal and optionally with an open
    extension."""

    N: int
    potential: Union[PotentialExpr, Tuple[PotentialExpr, ...]]
    eta: Optional[Tuple[Tuple[mpq, ...], ...]] = None
    euler: Optional[EulerData] = None
    base_point: Tuple[mpq, ...] = ()
    open_ext: Optional[OpenExt] = None
    truncation: Truncation = field(default_factory=Truncation)
    name: str = ""

    def __post_init__(self):
        if self.N < 1:
            raise ModelError("dimension must be at least 1")
        if not self.base_point:
            object.__setattr__(self, "base_point", tuple(mpq(0) for _ in range(self.N)))
        if len(self.base_point) != self.N:
            raise ModelError("base point must have %d entries" % self.N)
        if self.mode == "frobenius":
            if self.eta is None:
                raise ModelError("Frobenius mode requires a metric")
            if self.potential.nvars != self.N:
                raise ModelError("potential must have %d variables" % self.N)
        else:
            if len(self.potential) != self.N:
                raise ModelError("vector potential must have %d components" % self.N)
            if any(p.nvars != self.N for p in self.potential):
                raise ModelError("vector potential components must have %d variables" % self.N)
        if self.eta is not None:
            eta = self.eta
            if len(eta) != self.N or any(len(r) != self.N for r in eta):
                raise ModelError("metric must be %dx%d" % (self.N, self.N))
            if any(eta[i][j] != eta[j][i] for i in range(self.N) for j in range(self.N)):
                raise ModelError("metric is not symmetric")
            if linalg.det(eta) == 0:
                raise ModelError("metric is not invertible")
        if self.euler is not None:
            if len(self.euler.q) != self.N or len(self.euler.r) != self.N:
                raise ModelError("Euler data must have %d entries" % self.N)
            if self.euler.q[0] != 0:
                raise ModelError("q^1 must vanish (the unit has degree zero)")
        if self.open_ext is not None:
            if self.mode != "frobenius":
                raise ModelError("open extensions are defined over Frobenius manifolds")
            if self.open_ext.Fo.nvars != self.N + 1:
                raise ModelError("open potential must have N+1 = %d variables" % (self.N + 1))

    # -- derived data ------------------------------------------------------
    @property
    def mode(self) -> str:
        return "frobenius" if isinstance(self.potential, PotentialExpr) else "flat_f"

    @property
    def jet_order(self) -> int:
        return self.truncation.jet_order

    @functools.cached_property
    def eta_inv(self) -> Optional[Tuple[Tuple[mpq, ...], ...]]:
        if self.eta is None:
            return None
        return linalg.inverse(self.eta)

    def ring(self, order: Optional[int] = None) -> Ring:
        return model_ring(self.N, self.jet_order if order is None else order)

    def open_ring(self, order: Optional[int] = None) -> Ring:
        return model_ring(self.N + 1, self.jet_order if order is None else order, open_var=True)

    @functools.lru_cache(maxsize=None)
    def F(self, order: Optional[int] = None) -> Jet:
        if self.mode != "frobenius":
            raise ModelError("scalar potential only exists in Frobenius mode")
        return self.potential.to_jet(self.ring(order))

    @functools.lru_cache(maxsize=None)
    def vector_potential(self, order: Optional[int] = None) -> Tuple[Jet, ...]:
        if self.mode == "flat_f":
            r = self.ring(order)
            return tuple(p.to_jet(r) for p in self.potential)
        F = self.F(order)
        dF = [F.diff(m) for m in range(self.N)]
        ei = self.eta_inv
        out = []
        for a in range(self.N):
            acc = F.ring.zero()
            for m in range(self.N):
                if ei[a][m]:
                    acc = acc + dF[m].scale(ei[a][m])
            out.append(acc)
        return tuple(out)

    @functools.lru_cache(maxsize=None)
    def Fo(self, order: Optional[int] = None) -> Jet:
        if self.open_ext is None:
            raise ModelError("model has no open extension")
        return self.open_ext.Fo.to_jet(self.open_ring(order))

    def with_truncation(self, **kw) -> "ModelSpec":
        import dataclasses

        return dataclasses.replace(self, truncation=dataclasses.replace(self.truncation, **kw))


@functools.lru_cache(maxsize=None)
def model_ring(n: int, order: int, open_var: bool = False) -> Ring:
    names = ["t%d" % (i + 1) for i in range(n)]
    if open_var:
        names[-1] = "s"
    return Ring(n, order, names=names)


# ---------------------------------------------------------------------------
# residual reports
# ---------------------------------------------------------------------------

@dataclass
class ResidualReport:
    """Outcome of one exact identity check."""

    name: str
    valid_order: int
    is_zero: bool
    first_nonzero: Optional[Tuple[object, str]] = None
    data: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_jet(cls, name: str, jet: Jet, **data) -> "ResidualReport":
        fn = jet.first_nonzero()
        loc = None
        if fn is not None:
            loc = (_mono_str(jet.ring, fn[0]), str(fn[1]))
        return cls(name, jet.valid_order, fn is None, loc, dict(data))

    @classmethod
    def combine(cls, name: str, reports: Sequence["ResidualReport"], **data) -> "ResidualReport":
        reports = list(reports)
        vo = min((r.valid_order for r in reports), default=-1)
        bad = [r for r in reports if not r.is_zero]
        loc = None
        if bad:
            loc = ("%s @ %s" % (bad[0].name, bad[0].first_nonzero[0] if bad[0].first_nonzero else "?"),
                   bad[0].first_nonzero[1] if bad[0].first_nonzero else "?")
        d = {"checked": len(reports)}
        d.update(data)
        return cls(name, vo, not bad, loc, d)

    def as_dict(self) -> Dict[str, object]:
        out: Dict[str, object] = {
            "name": self.name,
            "valid_order": self.valid_order,
            "is_zero": self.is_zero,
        }
        if self.first_nonzero is not None:
            out["first_nonzero"] = {"monomial": self.first_nonzero[0], "value": self.first_nonzero[1]}
        if self.data:
            out["data"] = _plain(self.data)
        return out


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in sorted(x.items(), key=lambda kv: str(kv[0]))}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, (int, str)):
        return x
    if type(x) is type(mpq(0)):
        return str(x)
    return str(x)


def _mono_str(ring: Ring, ex: Sequence[int]) -> str:
    parts = []
    for i, e in enumerate(ex):
        if e:
            parts.append(ring.names[i] if e == 1 else "%s^%d" % (ring.names[i], e))
    return "*".join(parts) if parts else "1"


def _idx(i: int, N: int, open_mode: bool = False) -> str:
    if open_mode and i == N:
        return "s"
    return str(i + 1)


# ---------------------------------------------------------------------------
# structure constants and identity checks
# ---------------------------------------------------------------------------

class _Derivs:
    """Memoized partial derivatives of a jet."""

    def __init__(self, jet: Jet):
        self.jet = jet
        self._cache: Dict[Tuple[int, ...], Jet] = {(): jet}

    def __call__(self, *idx: int) -> Jet:
        key = tuple(sorted(idx))
        r = self._cache.get(key)
        if r is None:
            r = self(*key[:-1]).diff(key[-1])
            self._cache[key] = r
        return r


def structure_constants(m: ModelSpec, order: Optional[int] = None) -> List[List[List[Jet]]]:
    """``c[a][b][g] = c^a_{bg}`` as jets."""
    N = m.N
    if m.mode == "frobenius":
        if m.eta is None:
            raise ModelError("structure constants need a metric in Frobenius mode")
        d = _Derivs(m.F(order))
        ei = m.eta_inv
        ring = m.ring(order)
        c = [[[None] * N for _ in range(N)] for _ in range(N)]
        for b in range(N):
            for g in range(b, N):
                low = [d(mu, b, g) for mu in range(N)]
                for a in range(N):
                    acc = ring.zero()
                    for mu in range(N):
                        if ei[a][mu]:
                            acc = acc + low[mu].scale(ei[a][mu])
                    c[a][b][g] = acc
                    c[a][g][b] = acc
        return c
    vp = [_Derivs(f) for f in m.vector_potential(order)]
    return [[[vp[a](b, g) for g in range(N)] for b in range(N)] for a in range(N)]


def _raise_first(m: ModelSpec, d: _Derivs):
    """``F_{ab}^{nu} := eta^{nu mu} F_{mu a b}`` helper (Frobenius)."""
    N = m.N
    ei = m.eta_inv
    ring = d.jet.ring
    cache = {}

    def up(nu, a, b):
        key = (nu,) + tuple(sorted((a, b)))
        r = cache.get(key)
        if r is None:
            r = ring.zero()
            for mu in range(N):
                if ei[nu][mu]:
                    r = r + d(mu, a, b).scale(ei[nu][mu])
            cache[key] = r
        return r

    return up


def wdvv_residual(m: ModelSpec, order: Optional[int] = None) -> List[ResidualReport]:
    """Associativity residuals, one per index tuple with ``a <= dl``."""
    N = m.N
    reports = []
    if m.mode == "frobenius":
        d = _Derivs(m.F(order))
        up = _raise_first(m, d)
        for a in range(N):
            for b in range(N):
                for g in range(N):
                    for dl in range(a, N):
                        lhs = sum_jets(d(a, b, mu) * up(mu, g, dl) for mu in range(N))
                        rhs = sum_jets(d(dl, b, mu) * up(mu, g, a) for mu in range(N))
                        reports.append(ResidualReport.from_jet(
                            "wdvv[%d,%d,%d,%d]" % (a + 1, b + 1, g + 1, dl + 1), lhs - rhs))
        return reports
    vp = [_Derivs(f) for f in m.vector_potential(order)]
    for a in range(N):
        for b in range(N):
            for g in range(b, N):
                for dl in range(N):
                    lhs = sum_jets(vp[a](b, mu) * vp[mu](g, dl) for mu in range(N))
                    rhs = sum_jets(vp[a](g, mu) * vp[mu](b, dl) for mu in range(N))
                    reports.append(ResidualReport.from_jet(
                        "assoc[%d,%d,%d,%d]" % (a + 1, b + 1, g + 1, dl + 1), lhs - rhs))
    return reports


def sum_jets(it) -> Jet:
    acc = None
    for j in it:
        acc = j if acc is None else acc + j
    if acc is None:
        raise ValueError("empty sum")
    return acc


def _open_parts(m: ModelSpec, order: Optional[int]):
    """Derivatives of F (embedded in N+1 variables) and of F^o."""
    N = m.N
    ring = m.open_ring(order)
    from .series import embed

    F = embed(m.F(order), ring, list(range(N)))
    return _Derivs(F), _Derivs(m.Fo(order)), ring


def open_wdvv_residual(m: ModelSpec, order: Optional[int] = None) -> List[ResidualReport]:
    """Residuals of both open associativity families."""
    if m.open_ext is None:
        raise ModelError("open WDVV needs an open potential")
    if m.mode != "frobenius":
        raise ModelError("open WDVV is formulated over a Frobenius manifold")
    N = m.N
    s = N
    dF, dO, ring = _open_parts(m, order)
    ei = m.eta_inv

    def up_o(nu_obj, g):
        # eta^{nu mu} F^o_{mu g} contracted later; here return F^o_{nu g}
        return dO(nu_obj, g)

    reports = []
    # (a): F_{ab mu} eta^{mu nu} Fo_{nu g} + Fo_{ab} Fo_{s g} - (a <-> g)
    cache = {}

    def contr(a, b, g):
        key = (a, b, g)
        r = cache.get(key)
        if r is None:
            r = ring.zero()
            for mu in range(N):
                for nu in range(N):
                    if ei[mu][nu]:
                        r = r + (dF(a, b, mu) * dO(nu, g)).scale(ei[mu][nu])
            cache[key] = r
        return r

    for a in range(N):
        for b in range(N):
            for g in range(a, N):
                lhs = contr(a, b, g) + dO(a, b) * dO(s, g)
                rhs = contr(g, b, a) + dO(g, b) * dO(s, a)
                reports.append(ResidualReport.from_jet("open_wdvv_a[%d,%d,%d]" % (a + 1, b + 1, g + 1), lhs - rhs))
    for a in range(N):
        for b in range(a, N):
            lhs = contr(a, b, s) + dO(a, b) * dO(s, s)
            rhs = dO(s, b) * dO(s, a)
            reports.append(ResidualReport.from_jet("open_wdvv_b[%d,%d]" % (a + 1, b + 1), lhs - rhs))
    return reports


def unit_checks(m: ModelSpec, order: Optional[int] = None) -> ResidualReport:
    """Unit conditions for ``F`` (or ``F^alpha``) and, in open mode, ``F^o``."""
    N = m.N
    parts: List[ResidualReport] = []
    if m.mode == "frobenius":
        d = _Derivs(m.F(order))
        for a in range(N):
            for b in range(a, N):
                parts.append(ResidualReport.from_jet(
                    "d3F/dt1dt%ddt%d - eta" % (a + 1, b + 1), d(0, a, b) - m.eta[a][b]))
    else:
        vp = [_Derivs(f) for f in m.vector_potential(order)]
        for a in range(N):
            for b in range(N):
                parts.append(ResidualReport.from_jet(
                    "d2F%d/dt1dt%d - delta" % (a + 1, b + 1), vp[a](0, b) - (1 if a == b else 0)))
    if m.open_ext is not None:
        dO = _Derivs(m.Fo(order))
        for a in range(N):
            parts.append(ResidualReport.from_jet("d2Fo/dt1dt%d" % (a + 1), dO(0, a)))
        parts.append(ResidualReport.from_jet("d2Fo/dt1ds - 1", dO(0, N) - 1))
    return ResidualReport.combine("unit", parts)


def _poly_low_part(jet: Jet, max_deg: int):
    """Split a jet into its part of degree <= max_deg and the rest."""
    low = {}
    for ex, c in jet.terms():
        if sum(ex) <= max_deg:
            low[ex] = c
    high = jet - jet.ring.from_terms(low)
    return low, high


def _to_absolute(low_terms: Dict[Tuple[int, ...], mpq], base: Sequence[mpq]) -> Dict[Tuple[int, ...], mpq]:
    """Rewrite a polynomial in offset coordinates x = t - base in terms of t."""
    n = len(base)
    out: Dict[Tuple[int, ...], mpq] = {}
    from itertools import product
    from math import comb

    for ex, c in low_terms.items():
        # prod (t_i - b_i)^{e_i}
        ranges = [range(e + 1) for e in ex]
        for ks in product(*ranges):
            coef = c
            for e, k, b in zip(ex, ks, base):
                coef = coef * comb(e, k) * (-b) ** (e - k)
            if coef:
                out[ks] = out.get(tuple(ks), mpq(0)) + coef
    return {k: v for k, v in out.items() if v}


def _euler_apply(jet: Jet, coeffs_lin: Sequence[mpq], consts: Sequence[mpq]) -> Jet:
    """``sum_g (coeffs_lin[g] x^g + consts[g]) d_g jet``."""
    ring = jet.ring
    acc = ring.zero()
    for g in range(ring.nvars):
        dg = jet.diff(g)
        if coeffs_lin[g]:
            acc = acc + (ring.var(g) * dg).scale(coeffs_lin[g])
        if consts[g]:
            acc = acc + dg.scale(consts[g])
    return acc


def euler_residual(m: ModelSpec, order: Optional[int] = None) -> ResidualReport:
    """Quasi-homogeneity: ``L_E F - (3 - delta) F`` at most quadratic (and the
    open / flat-F analogues); extracts the inhomogeneous constants."""
    if m.euler is None:
        raise ModelError("model has no Euler data")
    eu = m.euler
    N = m.N
    e0 = eu.e0(m.base_point)
    lin = [1 - q for q in eu.q]
    parts = []
    data: Dict[str, object] = {}
    if m.mode == "frobenius":
        F = m.F(order)
        res = _euler_apply(F, lin, e0) - F.scale(3 - eu.delta)
        low, high = _poly_low_part(res, 2)
        absl = _to_absolute(low, m.base_point)
        A = [[mpq(0)] * N for _ in range(N)]
        B = [mpq(0)] * N
        C = mpq(0)
        for ex, c in absl.items():
            deg = sum(ex)
            if deg == 0:
                C = c
            elif deg == 1:
                B[ex.index(1)] = c
            else:
                idx = [i for i, e in enumerate(ex) for _ in range(e)]
                a, b = idx
                if a == b:
                    A[a][a] = 2 * c
                else:
                    A[a][b] = c
                    A[b][a] = c
        data.update({"A": A, "B": B, "C": C})
        parts.append(ResidualReport.from_jet("euler:F beyond quadratic", high))
    else:
        comps = m.vector_potential(order)
        Am = [[mpq(0)] * N for _ in range(N)]
        Bv = [mpq(0)] * N
        for a, Fa in enumerate(comps):
            res = _euler_apply(Fa, lin, e0) - Fa.scale(2 - eu.q[a])
            low, high = _poly_low_part(res, 1)
            for ex, c in _to_absolute(low, m.base_point).items():
                if sum(ex) == 0:
                    Bv[a] = c
                else:
                    Am[a][ex.index(1)] = c
            parts.append(ResidualReport.from_jet("euler:F%d beyond linear" % (a + 1), high))
        data.update({"A": Am, "B": Bv})
    if m.open_ext is not None:
        ox = m.open_ext
        Fo = m.Fo(order)
        lin_o = lin + [(1 - eu.delta) / 2]
        e0_o = list(e0) + [(1 - eu.delta) / 2 * ox.s_base + ox.r_extra]
        res = _euler_apply(Fo, lin_o, e0_o) - Fo.scale((3 - eu.delta) / 2)
        low, high = _poly_low_part(res, 1)
        D = [mpq(0)] * N
        Dt = mpq(0)
        Ec = mpq(0)
        for ex, c in _to_absolute(low, list(m.base_point) + [ox.s_base]).items():
            if sum(ex) == 0:
                Ec = c
            elif ex[N]:
                Dt = c
            else:
                D[ex.index(1)] = c
        data.update({"D": D, "D_tilde": Dt, "E": Ec})
        parts.append(ResidualReport.from_jet("euler:Fo beyond linear", high))
    rep = ResidualReport.combine("euler", parts, **data)
    return rep


def grading_check(m: ModelSpec) -> ResidualReport:
    """``(q^a + q^b - delta) eta_{ab} = 0`` for conformal Frobenius data."""
    if m.eta is None or m.euler is None:
        return ResidualReport("grading", 0, True, None, {"skipped": True})
    eu = m.euler
    for a in range(m.N):
        for b in range(m.N):
            v = (eu.q[a] + eu.q[b] - eu.delta) * m.eta[a][b]
            if v:
                return ResidualReport("grading", 0, False, ("eta[%d,%d]" % (a + 1, b + 1), str(v)))
    return ResidualReport("grading", 0, True)


# ---------------------------------------------------------------------------
# conversions
# ---------------------------------------------------------------------------

def _raise_potential(m: ModelSpec) -> Tuple[PotentialExpr, ...]:
    """Exact expressions for ``F^a = eta^{a mu} dF/dt^mu``."""
    N = m.N
    ei = m.eta_inv
    P = m.potential
    derivs: List[PotentialExpr] = []
    for mu in range(N):
        mons = []
        for ex, c in P.monomials:
            if ex[mu]:
                e2 = list(ex)
                e2[mu] -= 1
                mons.append((tuple(e2), c * ex[mu]))
        exps = []
        for t in P.exp_terms:
            sc = sum((s for v, s in t.exponent if v == mu), mpq(0))
            if sc:
                exps.append(ExpTerm(t.coeff * sc, t.exponent, t.prefactor))
            if t.prefactor[mu]:
                p2 = list(t.prefactor)
                p2[mu] -= 1
                exps.append(ExpTerm(t.coeff * t.prefactor[mu], t.exponent, tuple(p2)))
        derivs.append(_normalize_expr(N, mons, exps))
    out = []
    for a in range(N):
        mons = []
        exps = []
        for mu in range(N):
            if ei[a][mu]:
                mons += [(ex, c * ei[a][mu]) for ex, c in derivs[mu].monomials]
                exps += [ExpTerm(t.coeff * ei[a][mu], t.exponent, t.prefactor) for t in derivs[mu].exp_terms]
        out.append(_normalize_expr(N, mons, exps))
    return tuple(out)


def _normalize_expr(n, mons, exps) -> PotentialExpr:
    acc: Dict[Tuple[int, ...], mpq] = {}
    for ex, c in mons:
        acc[ex] = acc.get(ex, mpq(0)) + c
    eacc: Dict[Tuple, mpq] = {}
    for t in exps:
        key = (tuple(sorted(t.exponent)), t.prefactor)
        eacc[key] = eacc.get(key, mpq(0)) + t.coeff
    mons_t = tuple(sorted((k, v) for k, v in acc.items() if v))
    exps_t = tuple(ExpTerm(v, k[0], k[1]) for k, v in sorted(eacc.items(), key=lambda kv: (kv[0][0], kv[0][1])) if v)
    return PotentialExpr(n, mons_t, exps_t)


def to_flat_f(m: ModelSpec) -> ModelSpec:
    """The flat F-manifold with vector potential ``F^a = eta^{a mu} dF/dt^mu``."""
    if m.mode != "frobenius":
        raise ModelError("to_flat_f expects a Frobenius model")
    return ModelSpec(
        N=m.N,
        potential=_raise_potential(m),
        eta=None,
        euler=m.euler,
        base_point=m.base_point,
        open_ext=None,
        truncation=m.truncation,
        name=(m.name + ":flat") if m.name else "flat",
    )


def _embed_expr(e: PotentialExpr, n_new: int) -> PotentialExpr:
    pad = n_new - e.nvars
    mons = tuple((ex + (0,) * pad, c) for ex, c in e.monomials)
    exps = tuple(ExpTerm(t.coeff, t.exponent, t.prefactor + (0,) * pad) for t in e.exp_terms)
    return PotentialExpr(n_new, mons, exps)


def open_to_extension(m: ModelSpec, order: Optional[int] = None, check: bool = True) -> ModelSpec:
    """The (N+1)-dimensional flat F-manifold ``(F^1, ..., F^N, F^o)``."""
    if m.open_ext is None or m.mode != "frobenius":
        raise ModelError("open_to_extension needs a Frobenius model with an open potential")
    if check:
        reps = open_wdvv_residual(m, order) + [unit_checks(m, order)]
        bad = [r for r in reps if not r.is_zero]
        if bad:
            raise OpenWDVVError("open potential fails the open WDVV system or unit condition", bad)
    N = m.N
    comps = tuple(_embed_expr(p, N + 1) for p in _raise_potential(m)) + (m.open_ext.Fo,)
    eu = None
    if m.euler is not None:
        eu = EulerData(
            q=tuple(m.euler.q) + ((1 + m.euler.delta) / 2,),
            r=tuple(m.euler.r) + (m.open_ext.r_extra,),
            delta=m.euler.delta,
        )
    return ModelSpec(
        N=N + 1,
        potential=comps,
        eta=None,
        euler=eu,
        base_point=tuple(m.base_point) + (m.open_ext.s_base,),
        open_ext=None,
        truncation=m.truncation,
        name=(m.name + ":ext") if m.name else "ext",
    )


def canonical_coordinate_residual(m: ModelSpec, u: Jet) -> List[ResidualReport]:
    """``c^nu_{ab} du/dt^nu - du/dt^a du/dt^b`` and ``du/dt^1 - 1``."""
    N = m.N
    c = structure_constants(m, u.ring.trunc)
    du = [u.diff(i) for i in range(N)]
    reps = [ResidualReport.from_jet("du/dt1 - 1", du[0] - 1)]
    for a in range(N):
        for b in range(a, N):
            lhs = sum_jets(c[nu][a][b] * du[nu] for nu in range(N))
            reps.append(ResidualReport.from_jet("canonical[%d,%d]" % (a + 1, b + 1), lhs - du[a] * du[b]))
    return reps


def canonical_open_solution(m: ModelSpec, u_expr: PotentialExpr) -> ModelSpec:
    """Open extension ``F^o = u * s`` from a canonical coordinate ``u``."""
    import dataclasses

    if m.mode != "frobenius":
        raise ModelError("canonical solutions are built over Frobenius models")
    u = u_expr.to_jet(m.ring())
    reps = canonical_coordinate_residual(m, u)
    bad = [r for r in reps if not r.is_zero]
    if bad:
        raise PreconditionError("u is not a canonical coordinate", bad)
    N = m.N
    s_ex = tuple([0] * N + [1])
    mons = tuple((ex + (1,), c) for ex, c in u_expr.monomials)
    exps = tuple(ExpTerm(t.coeff, t.exponent, t.prefactor + (1,)) for t in u_expr.exp_terms)
    Fo = PotentialExpr(N + 1, mons, exps)
    return dataclasses.replace(m, open_ext=OpenExt(Fo=Fo, r_extra=mpq(0), s_base=mpq(0)))


def ode_residual(m: ModelSpec, order: Optional[int] = None) -> ResidualReport:
    """For ``F^o = t1 s + e^{t2/2} phi(s)`` models: ``(phi')^2 - phi phi'' - 4``
    with ``phi(s) = F^o(0, 0, s)`` in offset coordinates (base point t = 0)."""
    Fo = m.Fo(order)
    phi = Fo.restrict_zero(range(m.N))
    s = m.N
    d1 = phi.diff(s)
    d2 = d1.diff(s)
    return ResidualReport.from_jet("ode (phi')^2 - phi phi'' - 4", d1 * d1 - phi * d2 - 4)
