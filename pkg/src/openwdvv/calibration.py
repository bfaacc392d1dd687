"""Conformal calibrations of flat F-manifolds and Frobenius manifolds.

A calibration is a family of matrices of functions ``Omega^d_0`` (``d >= -1``)
with ``Omega^{-1}_0 = Id`` and ``d Omega^d_0 / dt^g = Omega^{d-1}_0 C_g`` where
``(C_g)^a_b = c^a_{gb}``.  The conformal ones are produced from the constant
matrices ``R_n`` and the gauge series ``G(z) = Id + sum G_n z^n`` solving the
recursion

    (-1)^{n-1} R_n^T = delta_{n1} U1^T + n G_n + [Q, G_n]
                        + sum_{k=1}^{n-1} (G_{n-k} delta_{k1} U1^T - (-1)^{k-1} R_k^T G_{n-k}),

with ``U1 = (E^mu c^a_{mu b})`` at the base point.  The slots of ``G_n`` with
``q^a - q^b = -n`` are free; they are set to zero (zero gauge).  The upper
matrices at the base point are the coefficients of ``(G^T(z))^{-1}``, and the
matrices themselves are integrated degree by degree from the gradient
equations.  The lower matrices ``Omega^0_d`` come from the relation

    (Id + sum_{d>=1} (-1)^d Omega^0_{d-1} z^d)(Id + sum_{d>=1} Omega^{d-1}_0 z^d) = Id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from gmpy2 import mpq

from . import linalg
from .linalg import Matrix
from .model import (
    ModelError,
    ModelSpec,
    PreconditionError,
    ResidualReport,
    open_to_extension,
    structure_constants,
    sum_jets,
)
from .series import Jet, JetMatrix, Q, Ring, embed, matrix_series_inverse

__all__ = [
    "Calibration",
    "OpenCalibration",
    "IntegrabilityError",
    "GaugeMismatchError",
    "DepthError",
    "compute_r_g",
    "integrate_calibration",
    "calibrate",
    "extend_calibration",
    "open_calibration",
    "upper_lower_residual",
    "homogeneity_residuals",
    "frobenius_symmetry_residuals",
    "extension_property_residuals",
    "open_calibration_residuals",
    "resonance_residual",
    "n_max_of",
]


class IntegrabilityError(PreconditionError):
    """Mixed partial derivatives of the calibration gradient disagree."""


class GaugeMismatchError(ValueError):
    """The extension's calibration data does not restrict to the base one."""


class DepthError(ValueError):
    """A calibration matrix beyond the computed depth was requested."""


def n_max_of(q: Sequence[mpq]) -> int:
    """Largest integer ``n >= 0`` with ``n <= max(q^a - q^b)``."""
    spread = max(q) - min(q)
    return int(spread.numerator // spread.denominator)


@dataclass
class Calibration:
    """Matrices ``Omega^d_0``, ``Omega^0_d`` (``d = -1..D``), ``R_n`` and ``G_n``."""

    model: ModelSpec
    D: int
    upper_list: List[JetMatrix]
    lower_list: List[JetMatrix]
    R: List[Matrix]
    G: List[Matrix]
    q: Tuple[mpq, ...]
    delta: Optional[mpq]
    mode: str
    base_norm: Tuple[mpq, ...]
    ring: Ring
    frobenius_symmetric: bool = False
    integrability: List[ResidualReport] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.q)

    @property
    def n_max(self) -> int:
        return len(self.R)

    def mu(self, lam: Optional[mpq] = None) -> Tuple[mpq, ...]:
        """``mu^a = q^a + lam - 3/2``; the default ``lam = (3 - delta)/2`` gives ``q - delta/2``."""
        if lam is None:
            if self.delta is None:
                raise ModelError("no conformal dimension: pass lam explicitly")
            lam = (3 - self.delta) / 2
        return tuple(qa + Q(lam) - mpq(3, 2) for qa in self.q)

    @property
    def Omega_upper(self) -> List[JetMatrix]:
        return self.upper_list

    @property
    def Omega_lower(self) -> List[JetMatrix]:
        return self.lower_list

    def upper(self, d: int) -> JetMatrix:
        """``Omega^d_0``."""
        if d < -1:
            raise DepthError("negative depth %d" % d)
        if d > self.D:
            raise DepthError("depth %d exceeds calibration depth %d" % (d, self.D))
        return self.upper_list[d + 1]

    def lower(self, d: int) -> JetMatrix:
        """``Omega^0_d``."""
        if d < -1:
            raise DepthError("negative depth %d" % d)
        if d > self.D:
            raise DepthError("depth %d exceeds calibration depth %d" % (d, self.D))
        return self.lower_list[d + 1]

    def R_n(self, n: int) -> Matrix:
        if 1 <= n <= len(self.R):
            return self.R[n - 1]
        return linalg.zeros(self.N)

    @property
    def R_sum(self) -> Matrix:
        acc = linalg.zeros(self.N)
        for r in self.R:
            acc = linalg.mat_add(acc, r)
        return acc


# ---------------------------------------------------------------------------
# R_n / G_n recursion
# ---------------------------------------------------------------------------

def _u1(m: ModelSpec, c) -> Matrix:
    N = m.N
    e0 = m.euler.e0(m.base_point)
    c0 = [[[c[a][b][g].constant_term() for g in range(N)] for b in range(N)] for a in range(N)]
    return tuple(tuple(sum((e0[mu] * c0[a][mu][b] for mu in range(N)), mpq(0)) for b in range(N)) for a in range(N))


def compute_r_g(m: ModelSpec, mode: Optional[str] = None, n_g: Optional[int] = None,
                c=None) -> Tuple[List[Matrix], List[Matrix]]:
    """Solve the recursion for ``R_n`` (``n = 1..n_max``) and ``G_n`` (``n = 1..n_g``)."""
    if m.euler is None:
        raise ModelError("calibration needs Euler data")
    if mode is not None and mode not in ("frobenius", "flat_f"):
        raise ValueError("mode must be 'frobenius' or 'flat_f'")
    N = m.N
    q = m.euler.q
    if c is None:
        c = structure_constants(m, 3 if m.mode == "frobenius" else 2)
    U1 = _u1(m, c)
    U1T = linalg.transpose(U1)
    nmax = n_max_of(q)
    n_g = max(n_g if n_g is not None else nmax, nmax)
    R: List[Matrix] = []
    G: List[Matrix] = []
    RT: List[Matrix] = []
    for n in range(1, n_g + 1):
        known = linalg.zeros(N)
        if n == 1:
            known = linalg.mat_add(known, U1T)
        else:
            known = linalg.mat_add(known, linalg.mat_mul(G[n - 2], U1T))
        for k in range(1, n):
            if k - 1 < len(RT):
                term = linalg.mat_mul(RT[k - 1], G[n - k - 1])
                sign = 1 if (k - 1) % 2 == 0 else -1
                known = linalg.mat_sub(known, linalg.mat_scale(term, sign))
        Gn = [[mpq(0)] * N for _ in range(N)]
        RnT = [[mpq(0)] * N for _ in range(N)]
        sgn = 1 if (n - 1) % 2 == 0 else -1
        for a in range(N):
            for b in range(N):
                w = n + q[a] - q[b]
                if w == 0:
                    RnT[a][b] = sgn * known[a][b]
                else:
                    Gn[a][b] = -known[a][b] / w
        Gn = linalg.freeze(Gn)
        G.append(Gn)
        if n <= nmax:
            RnT = linalg.freeze(RnT)
            RT.append(RnT)
            R.append(linalg.transpose(RnT))
        elif not linalg.is_zero(linalg.freeze(RnT)):  # pragma: no cover - impossible by grading
            raise AssertionError("R_n beyond the q-spread")
    # trailing zero R's carry no information
    while R and linalg.is_zero(R[-1]):
        R.pop()
    return R, G


def resonance_residual(q: Sequence[mpq], R: Sequence[Matrix]) -> ResidualReport:
    """``[Q, R_n] = n R_n`` entrywise."""
    Qm = linalg.diag(q)
    for n, Rn in enumerate(R, start=1):
        d = linalg.mat_sub(linalg.commutator(Qm, Rn), linalg.mat_scale(Rn, n))
        for a, row in enumerate(d):
            for b, v in enumerate(row):
                if v:
                    return ResidualReport("[Q,R_n]=nR_n", 0, False, ("R_%d[%d,%d]" % (n, a + 1, b + 1), str(v)))
    return ResidualReport("[Q,R_n]=nR_n", 0, True)


# ---------------------------------------------------------------------------
# integration of the gradient system
# ---------------------------------------------------------------------------

def _integrate(grads: Sequence[Jet], const: mpq, ring: Ring) -> Jet:
    """The jet ``f`` with ``df/dx^g = grads[g]`` and ``f(0) = const``."""
    valid = min(g.valid[0] for g in grads) + 1
    valid = min(valid, ring.trunc)
    terms: Dict[Tuple[int, ...], mpq] = {}
    if const:
        terms[tuple([0] * ring.nvars)] = Q(const)
    for g_idx, g in enumerate(grads):
        for ex, c in g.terms():
            # term c * x^ex in d/dx^g comes from x^{ex + 1_g} / (ex_g + 1)
            # use it only when g is the first variable present in the target
            if any(ex[i] for i in range(g_idx)):
                continue
            e2 = list(ex)
            e2[g_idx] += 1
            if sum(e2) > valid:
                continue
            terms[tuple(e2)] = c / e2[g_idx]
    return ring.from_terms(terms, valid=(valid,), exact=False)


def _mixed_partials(grads: Sequence[Jet], label: str) -> List[ResidualReport]:
    out = []
    n = len(grads)
    for a in range(n):
        for b in range(a + 1, n):
            out.append(ResidualReport.from_jet(
                "%s d%d/d%d" % (label, a + 1, b + 1), grads[a].diff(b) - grads[b].diff(a)))
    return out


def integrate_calibration(m: ModelSpec, R: Sequence[Matrix], G: Sequence[Matrix], D: int,
                          jet_order: Optional[int] = None, c=None, strict: bool = True) -> Calibration:
    """Integrate ``Omega^d_0`` for ``d <= D`` and derive ``Omega^0_d``."""
    if m.euler is None:
        raise ModelError("calibration needs Euler data")
    N = m.N
    order = m.jet_order if jet_order is None else jet_order
    ring = m.ring(order)
    if c is None:
        c = structure_constants(m, order)
    C = [JetMatrix([[c[a][g][b] for b in range(N)] for a in range(N)], ring) for g in range(N)]
    # initial values (G^T(z))^{-1} at the base point
    GT = [linalg.identity(N)] + [linalg.transpose(g) for g in G]
    while len(GT) < D + 2:
        GT.append(linalg.zeros(N))
    init = matrix_series_inverse([JetMatrix.constant(ring, g) for g in GT[: D + 2]], D + 1)
    upper = [JetMatrix.identity(ring, N)]
    integ: List[ResidualReport] = []
    for d in range(0, D + 1):
        prev = upper[-1]
        grads = [prev @ C[g] for g in range(N)]
        ent = []
        for a in range(N):
            row = []
            for b in range(N):
                gl = [grads[g].entries[a][b] for g in range(N)]
                integ.extend(_mixed_partials(gl, "Omega^%d_0[%d,%d]" % (d, a + 1, b + 1)))
                row.append(_integrate(gl, init[d + 1].entries[a][b].constant_term(), ring))
            ent.append(row)
        upper.append(JetMatrix(ent, ring))
    bad = [r for r in integ if not r.is_zero]
    if bad and strict:
        raise IntegrabilityError("calibration gradient is not integrable", bad)
    lower = _lower_from_upper(upper, D, ring, N)
    base_norm = tuple(lower[1].entries[a][0].constant_term() for a in range(N))
    cal = Calibration(
        model=m,
        D=D,
        upper_list=upper,
        lower_list=lower,
        R=list(R),
        G=list(G),
        q=tuple(m.euler.q),
        delta=m.euler.delta,
        mode=m.mode,
        base_norm=base_norm,
        ring=ring,
        integrability=integ,
    )
    if m.mode == "frobenius":
        cal.frobenius_symmetric = all(r.is_zero for r in frobenius_symmetry_residuals(cal))
    return cal


def _lower_from_upper(upper: Sequence[JetMatrix], D: int, ring: Ring, N: int) -> List[JetMatrix]:
    L = matrix_series_inverse(list(upper[: D + 2]), D + 1)
    lower = [JetMatrix.identity(ring, N)]
    for d in range(1, D + 2):
        lower.append(L[d] if d % 2 == 0 else -L[d])
    return lower


def calibrate(m: ModelSpec, D: Optional[int] = None, jet_order: Optional[int] = None,
              strict: bool = True) -> Calibration:
    """Recursion plus integration with the zero gauge."""
    D = m.truncation.D if D is None else D
    order = m.jet_order if jet_order is None else jet_order
    c = structure_constants(m, order)
    R, G = compute_r_g(m, n_g=D + 1, c=c)
    return integrate_calibration(m, R, G, D, order, c=c, strict=strict)


# ---------------------------------------------------------------------------
# verification of calibration identities
# ---------------------------------------------------------------------------

def _matrix_report(name: str, M: JetMatrix) -> ResidualReport:
    reps = [ResidualReport.from_jet("%s[%d,%d]" % (name, i + 1, j + 1), M.entries[i][j])
            for i in range(M.rows) for j in range(M.cols)]
    return ResidualReport.combine(name, reps)


def upper_lower_residual(cal: Calibration) -> ResidualReport:
    """``(Id + sum (-1)^d Omega^0_{d-1} z^d)(Id + sum Omega^{d-1}_0 z^d) - Id`` to ``z^{D+1}``."""
    N, ring = cal.N, cal.ring
    reps = []
    for k in range(1, cal.D + 2):
        acc = JetMatrix.zeros(ring, N)
        for i in range(0, k + 1):
            Lm = cal.lower(i - 1).scale((-1) ** i)
            Um = cal.upper(k - i - 1)
            acc = acc + Lm @ Um
        reps.append(_matrix_report("upper-lower z^%d" % k, acc))
    return ResidualReport.combine("upper-lower", reps, order=cal.D + 1)


def _euler_derivative(cal: Calibration, M: JetMatrix, ring: Ring, q, e0) -> JetMatrix:
    N = len(q)
    xs = [ring.var(i) for i in range(N)]

    def ed(j: Jet) -> Jet:
        acc = ring.zero()
        for t in range(N):
            dj = j.diff(t)
            if 1 - q[t]:
                acc = acc + (xs[t] * dj).scale(1 - q[t])
            if e0[t]:
                acc = acc + dj.scale(e0[t])
        return acc

    return M.map(ed)


def homogeneity_residuals(cal: Calibration) -> List[ResidualReport]:
    """Homogeneity of ``Omega^d_0`` and ``Omega^0_d`` for ``d = -1..D``."""
    m = cal.model
    ring = cal.ring
    N = cal.N
    e0 = m.euler.e0(m.base_point)
    Qj = JetMatrix.constant(ring, linalg.diag(cal.q))
    Rj = {n: JetMatrix.constant(ring, cal.R_n(n)) for n in range(1, cal.D + 2)}
    reps = []
    for d in range(-1, cal.D + 1):
        U = cal.upper(d)
        lhs = _euler_derivative(cal, U, ring, cal.q, e0)
        rhs = U.scale(d + 1) + (U @ Qj - Qj @ U)
        for i in range(1, d + 2):
            if i <= cal.n_max:
                rhs = rhs + (Rj[i] @ cal.upper(d - i)).scale((-1) ** (i - 1))
        reps.append(_matrix_report("homogeneity Omega^%d_0" % d, lhs - rhs))
        L = cal.lower(d)
        lhs = _euler_derivative(cal, L, ring, cal.q, e0)
        rhs = L.scale(d + 1) + (L @ Qj - Qj @ L)
        for i in range(1, d + 2):
            if i <= cal.n_max:
                rhs = rhs + cal.lower(d - i) @ Rj[i]
        reps.append(_matrix_report("homogeneity Omega^0_%d" % d, lhs - rhs))
    return reps


def frobenius_symmetry_residuals(cal: Calibration) -> List[ResidualReport]:
    """``eta R_n eta^-1 = (-1)^{n-1} R_n^T`` and ``eta Omega^0_d eta^-1 = (Omega^d_0)^T``."""
    m = cal.model
    if m.eta is None:
        return [ResidualReport("frobenius symmetry", 0, False, ("no metric", "-"))]
    eta, ei = m.eta, m.eta_inv
    reps = []
    for n, Rn in enumerate(cal.R, start=1):
        d = linalg.mat_sub(linalg.mat_mul(linalg.mat_mul(eta, Rn), ei),
                           linalg.mat_scale(linalg.transpose(Rn), (-1) ** (n - 1)))
        bad = [(a, b, v) for a, r in enumerate(d) for b, v in enumerate(r) if v]
        reps.append(ResidualReport("eta R_%d eta^-1" % n, 0, not bad,
                                   None if not bad else ("[%d,%d]" % (bad[0][0] + 1, bad[0][1] + 1), str(bad[0][2]))))
    E = JetMatrix.constant(cal.ring, eta)
    Ei = JetMatrix.constant(cal.ring, ei)
    for d in range(0, cal.D + 1):
        reps.append(_matrix_report("eta Omega^0_%d eta^-1 - (Omega^%d_0)^T" % (d, d),
                                   E @ cal.lower(d) @ Ei - cal.upper(d).transpose()))
    return reps


# ---------------------------------------------------------------------------
# extensions and open calibrations
# ---------------------------------------------------------------------------

def extend_calibration(base: Calibration, m_ext: ModelSpec, strict: bool = True) -> Calibration:
    """Calibration of the (N+1)-dimensional extension in the zero gauge."""
    if m_ext.mode != "flat_f" or m_ext.N != base.N + 1:
        raise ModelError("extend_calibration expects the (N+1)-dimensional extension")
    order = base.ring.trunc
    ext = calibrate(m_ext, D=base.D, jet_order=order, strict=strict)
    N = base.N
    # compatibility with the base data
    for n in range(1, max(base.n_max, ext.n_max) + 1):
        Rt = ext.R_n(n)
        if tuple(tuple(r[:N]) for r in Rt[:N]) != base.R_n(n):
            raise GaugeMismatchError("pi_N(R~_%d) differs from R_%d" % (n, n))
    for n in range(1, len(base.G) + 1):
        Gt = ext.G[n - 1]
        if tuple(tuple(r[:N]) for r in Gt[:N]) != base.G[n - 1]:
            raise GaugeMismatchError("pi_N(G~_%d) differs from G_%d" % (n, n))
    return ext


def extension_property_residuals(base: Calibration, ext: Calibration) -> List[ResidualReport]:
    """The three block properties of an extension calibration."""
    N = base.N
    ring = ext.ring
    var_map = list(range(N))
    reps = []
    for d in range(-1, base.D + 1):
        U = ext.upper(d)
        Ub = base.upper(d)
        for a in range(N):
            for b in range(N):
                reps.append(ResidualReport.from_jet(
                    "pi_N Omega~^%d_0[%d,%d]" % (d, a + 1, b + 1),
                    U.entries[a][b] - embed(Ub.entries[a][b], ring, var_map)))
            reps.append(ResidualReport.from_jet("Omega~^{%d,%d}_{N+1,0}" % (a + 1, d), U.entries[a][N]))
    for n in range(1, ext.n_max + 1):
        Rt = ext.R_n(n)
        for a in range(N + 1):
            v = Rt[a][N]
            reps.append(ResidualReport("R~_%d[%d,N+1]" % (n, a + 1), 0, v == 0,
                                       None if v == 0 else ("entry", str(v))))
        for a in range(N):
            for b in range(N):
                v = Rt[a][b] - base.R_n(n)[a][b]
                reps.append(ResidualReport("pi_N R~_%d[%d,%d]" % (n, a + 1, b + 1), 0, v == 0,
                                           None if v == 0 else ("entry", str(v))))
    return reps


@dataclass
class OpenCalibration:
    """Open calibration ``Phi_{b,d}`` with the extended data ``R~_n`` and ``mu~``."""

    base: Calibration
    ext: Calibration
    Phi: Dict[Tuple[int, int], Jet]
    R_tilde: List[Matrix]
    mu_tilde: Tuple[mpq, ...]

    @property
    def N(self) -> int:
        return self.base.N

    @property
    def D(self) -> int:
        return self.ext.D


def open_calibration(ext: Calibration, base: Optional[Calibration] = None, check: bool = True) -> OpenCalibration:
    """``Phi_{b,d} := (Omega~^0_d)^{N+1}_b``."""
    N1 = ext.N
    N = N1 - 1
    Phi = {}
    for d in range(-1, ext.D + 1):
        L = ext.lower(d)
        for b in range(N1):
            Phi[(b, d)] = L.entries[N][b]
    mu_t = ext.mu()
    oc = OpenCalibration(base=base, ext=ext, Phi=Phi, R_tilde=list(ext.R), mu_tilde=mu_t)
    if check:
        bad = [r for r in open_calibration_residuals(oc) if not r.is_zero]
        if bad:
            raise PreconditionError("open calibration axioms fail", bad)
    return oc


def open_calibration_residuals(oc: OpenCalibration) -> List[ResidualReport]:
    """The three axioms of an open calibration (plus the normalization)."""
    ext = oc.ext
    m = ext.model
    N1 = ext.N
    N = N1 - 1
    ring = ext.ring
    Fo = m.vector_potential(ring.trunc)[N]
    d2 = {}

    def fo2(g, mu):
        key = (min(g, mu), max(g, mu))
        if key not in d2:
            d2[key] = Fo.diff(g).diff(mu)
        return d2[key]

    reps = []
    for b in range(N1):
        v = oc.Phi[(b, -1)] - (1 if b == N else 0)
        reps.append(ResidualReport.from_jet("Phi_{%d,-1} - delta" % (b + 1), v))
    e0 = m.euler.e0(m.base_point)
    q = ext.q
    mu_t = oc.mu_tilde
    xs = [ring.var(i) for i in range(N1)]
    for d in range(0, ext.D + 1):
        Lprev = ext.lower(d - 1)
        for b in range(N1):
            for g in range(N1):
                rhs = fo2(g, N) * oc.Phi[(b, d - 1)]
                for mu in range(N):
                    rhs = rhs + fo2(g, mu) * Lprev.entries[mu][b]
                reps.append(ResidualReport.from_jet(
                    "dPhi_{%d,%d}/dt%d" % (b + 1, d, g + 1), oc.Phi[(b, d)].diff(g) - rhs))
    for d in range(-1, ext.D + 1):
        for b in range(N1):
            P = oc.Phi[(b, d)]
            lhs = ring.zero()
            for t in range(N1):
                dj = P.diff(t)
                if 1 - q[t]:
                    lhs = lhs + (xs[t] * dj).scale(1 - q[t])
                if e0[t]:
                    lhs = lhs + dj.scale(e0[t])
            rhs = P.scale(d + mpq(1, 2) + mu_t[b])
            for i in range(1, d + 2):
                Ri = ext.R_n(i)
                for mu in range(N1):
                    if Ri[mu][b]:
                        rhs = rhs + oc.Phi[(mu, d - i)].scale(Ri[mu][b])
            reps.append(ResidualReport.from_jet("homogeneity Phi_{%d,%d}" % (b + 1, d), lhs - rhs))
    # normalization Phi_{1,0} = t^{N+1}: derivative is the unit covector e_{N+1}
    for g in range(N1):
        reps.append(ResidualReport.from_jet("dPhi_{1,0}/dt%d - delta" % (g + 1),
                                            oc.Phi[(0, 0)].diff(g) - (1 if g == N else 0)))
    return reps
