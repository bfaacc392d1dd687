"""Built-in models: the point, the A2 (3-spin) Frobenius manifold, P^1 and
their open extensions.

All potentials are written in offset coordinates around the base point (the
origin, except for the ``s`` coordinate of the P^1 open family, see
:func:`p1_open`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from gmpy2 import mpq

from .model import (
    EulerData,
    ExpTerm,
    ModelError,
    ModelSpec,
    OpenExt,
    PotentialExpr,
    ResidualReport,
    Truncation,
    canonical_open_solution,
    euler_residual,
    wdvv_residual,
)
from .series import Q

__all__ = ["BuiltinModel", "builtin", "builtin_ids", "list_builtins", "manifest_run",
           "point", "point_open", "a2_3spin", "p1", "p1_open", "p1_canonical", "UnknownModelError"]


class UnknownModelError(KeyError):
    pass


@dataclass(frozen=True)
class BuiltinModel:
    id: str
    spec: ModelSpec
    provenance: Dict[str, str] = field(default_factory=dict)

    @property
    def truncation(self) -> Truncation:
        return self.spec.truncation


_Z, _O = mpq(0), mpq(1)
_ANTI = ((_Z, _O), (_O, _Z))


def point() -> BuiltinModel:
    spec = ModelSpec(
        N=1,
        potential=PotentialExpr.poly(1, {(3,): mpq(1, 6)}),
        eta=((_O,),),
        euler=EulerData((_Z,), (_Z,), _Z),
        truncation=Truncation(jet_order=12, D=12, P_max=4, G_max=4, m_max=3,
                              lambdas=(mpq(3, 2), mpq(1, 3), mpq(-2, 5))),
        name="point",
    )
    return BuiltinModel("point", spec, {
        "potential": "cubic point potential",
        "eta": "one-dimensional unit metric",
        "euler": "E = t d/dt, delta = 0",
    })


def point_open() -> BuiltinModel:
    base = point().spec
    Fo = PotentialExpr.poly(2, {(1, 1): 1, (0, 3): mpq(1, 6)})
    spec = replace(base, open_ext=OpenExt(Fo=Fo), name="point_open",
                   truncation=replace(base.truncation, P_max=3, G_max=4))
    return BuiltinModel("point_open", spec, {
        "open_potential": "t s + s^3/6",
        "r_extra": "0 (E^s = s/2)",
    })


def a2_3spin() -> BuiltinModel:
    third = mpq(1, 3)
    spec = ModelSpec(
        N=2,
        potential=PotentialExpr.poly(2, {(2, 1): mpq(1, 2), (0, 4): mpq(1, 72)}),
        eta=_ANTI,
        euler=EulerData((_Z, third), (_Z, _Z), third),
        truncation=Truncation(jet_order=9, D=9, P_max=3, G_max=3, m_max=3,
                              lambdas=(mpq(4, 3), mpq(1, 3), mpq(-2, 5))),
        name="a2_3spin",
    )
    # shipped as derived data: verify at load time
    bad = [r for r in wdvv_residual(spec) + [euler_residual(spec)] if not r.is_zero]
    if bad:  # pragma: no cover - guarded by tests
        raise ModelError("a2_3spin potential fails its load-time verification")
    return BuiltinModel("a2_3spin", spec, {
        "potential": "derived: t1^2 t2/2 + t2^4/72, verified at load time against WDVV and homogeneity",
        "eta": "eta_{ab} = delta_{a+b,3}",
        "euler": "q = (0, 1/3), r = 0, delta = 1/3",
    })


def p1() -> BuiltinModel:
    spec = ModelSpec(
        N=2,
        potential=PotentialExpr(2, (((2, 1), mpq(1, 2)),), (ExpTerm(_O, ((1, _O),), (0, 0)),)),
        eta=_ANTI,
        euler=EulerData((_Z, _O), (_Z, mpq(2)), _O),
        truncation=Truncation(jet_order=8, D=8, P_max=2, G_max=3, m_max=3,
                              lambdas=(_O, mpq(1, 3), mpq(-2, 5))),
        name="p1",
    )
    return BuiltinModel("p1", spec, {
        "potential": "t1^2 t2/2 + e^{t2}",
        "euler": "E = t1 d/dt1 + 2 d/dt2, delta = 1",
    })


def _p1_open_expr(alpha: mpq, beta: mpq, sign: int) -> PotentialExpr:
    """``F^o`` of the P^1 family in the offset coordinate ``sigma = s + beta``."""
    half = mpq(1, 2)
    mons = {(1, 0, 1): _O}
    if beta:
        mons[(1, 0, 0)] = -beta
    if alpha == 0:
        exps = (ExpTerm(mpq(2 * sign), ((1, half),), (0, 0, 1)),)
    else:
        exps = (
            ExpTerm(mpq(sign) / alpha, ((1, half), (2, alpha)), (0, 0, 0)),
            ExpTerm(-mpq(sign) / alpha, ((1, half), (2, -alpha)), (0, 0, 0)),
        )
    return PotentialExpr(3, tuple(sorted(mons.items())), exps)


def p1_open(alpha=1, beta=0, sign: int = 1) -> BuiltinModel:
    """``F^o = t1 s + sign * 2/alpha * e^{t2/2} sinh(alpha (s + beta))``
    (``t1 s + sign * 2 e^{t2/2} (s + beta)`` for ``alpha = 0``).

    ``sinh(alpha * beta)`` is not rational, so the base point of ``s`` is
    moved to ``s = -beta``: the jet variable is ``sigma = s + beta``.
    """
    alpha, beta = Q(alpha), Q(beta)
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    base = p1().spec
    Fo = _p1_open_expr(alpha, beta, sign)
    ident = "p1_open(%s,%s,%s)" % (alpha, beta, "+" if sign > 0 else "-")
    spec = replace(base, open_ext=OpenExt(Fo=Fo, r_extra=_Z, s_base=-beta), name=ident,
                   truncation=replace(base.truncation, P_max=2, G_max=2, m_max=2))
    return BuiltinModel(ident, spec, {
        "open_potential": "two-parameter family, sampled at rational (alpha, beta)",
        "s_base": "-beta (offset coordinate sigma = s + beta)",
    })


def p1_canonical(k: int = 1) -> BuiltinModel:
    """``F^o = u_k s`` with ``u_{1,2} = t1 +- 2 e^{t2/2}``."""
    if k not in (1, 2):
        raise ValueError("k must be 1 or 2")
    sign = 1 if k == 1 else -1
    u = PotentialExpr(2, (((1, 0), _O),), (ExpTerm(mpq(2 * sign), ((1, mpq(1, 2)),), (0, 0)),))
    base = p1().spec
    spec = canonical_open_solution(base, u)
    spec = replace(spec, name="p1_canonical(%d)" % k,
                   truncation=replace(base.truncation, P_max=2, G_max=2, m_max=2))
    return BuiltinModel("p1_canonical(%d)" % k, spec, {
        "open_potential": "u_k * s with u_k a canonical coordinate",
    })


_SIMPLE = {"point": point, "point_open": point_open, "a2_3spin": a2_3spin, "p1": p1}

#: ids listed by the CLI; parametrised families are listed with sample arguments
_LISTED = ["point", "point_open", "a2_3spin", "p1", "p1_open(1,0)", "p1_open(2,1/2)", "p1_open(0,0)",
           "p1_open(0,3)", "p1_open(1,0,-)", "p1_canonical(1)", "p1_canonical(2)"]


def builtin_ids() -> List[str]:
    return list(_LISTED)


def list_builtins() -> List[BuiltinModel]:
    return [builtin(i) for i in _LISTED]


def builtin(ident: str) -> BuiltinModel:
    """Look up a built-in model, e.g. ``"point"``, ``"p1_open(2,1/2)"``, ``"p1_open(1,0,-)"``."""
    ident = ident.strip().replace(" ", "")
    if ident in _SIMPLE:
        return _SIMPLE[ident]()
    m = re.fullmatch(r"p1_open\(([^,()]+),([^,()]+)(?:,([+-]))?\)", ident)
    if m:
        return p1_open(Q(m.group(1)), Q(m.group(2)), -1 if m.group(3) == "-" else 1)
    m = re.fullmatch(r"p1_canonical\(([12])\)", ident)
    if m:
        return p1_canonical(int(m.group(1)))
    raise UnknownModelError("unknown built-in model %r" % ident)


def manifest_run(model: BuiltinModel, stages: Optional[List[str]] = None) -> List[ResidualReport]:
    """Run the full check pipeline at the model's recommended truncation."""
    from .pipeline import run_checks

    result = run_checks(model.spec, stages=stages)
    return result.reports()
