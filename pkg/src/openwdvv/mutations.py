"""Negative-control fixtures: deliberately broken inputs that the pipeline
must reject at a known stage, with a located first nonzero coefficient."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

from gmpy2 import mpq

from .catalog import point, point_open
from .hierarchy import DescSeries
from .model import EulerData, ModelSpec, OpenExt, PotentialExpr, Truncation

__all__ = ["Mutation", "a3_model", "broken_wdvv", "broken_open_unit", "perturbed_potential", "mutations"]

_Z, _O = mpq(0), mpq(1)


@dataclass(frozen=True)
class Mutation:
    id: str
    spec: ModelSpec
    expected_stage: str
    description: str
    faults: Dict[str, Callable[[DescSeries], DescSeries]] = field(default_factory=dict)


def a3_model(quintic: mpq = mpq(1, 60)) -> ModelSpec:
    """``t1^2 t3/2 + t1 t2^2/2 + t2^2 t3^2/4 + quintic * t3^5`` with the
    anti-diagonal metric; associative exactly for ``quintic = 1/60``."""
    F = PotentialExpr.poly(3, {(2, 0, 1): mpq(1, 2), (1, 2, 0): mpq(1, 2), (0, 2, 2): mpq(1, 4),
                               (0, 0, 5): quintic})
    eta = ((_Z, _Z, _O), (_Z, _O, _Z), (_O, _Z, _Z))
    return ModelSpec(N=3, potential=F, eta=eta, euler=EulerData((_Z, mpq(1, 4), mpq(1, 2)), (_Z, _Z, _Z), mpq(1, 2)),
                     truncation=Truncation(jet_order=8, D=6, P_max=2, G_max=2, m_max=1, lambdas=(_O,)),
                     name="a3")


def broken_wdvv() -> Mutation:
    spec = replace(a3_model(mpq(-1, 60)), name="a3_broken_wdvv")
    return Mutation("broken_wdvv", spec, "wdvv", "sign of the quintic term of the A3 potential flipped")


def broken_open_unit() -> Mutation:
    # open WDVV still holds, but d2Fo/dt1ds = 2 and d2Fo/dt1dt1 = 1
    Fo = PotentialExpr.poly(2, {(1, 1): 2, (2, 0): mpq(1, 2), (0, 2): 1})
    spec = replace(point_open().spec, open_ext=OpenExt(Fo=Fo), name="point_open_broken_unit")
    return Mutation("broken_open_unit", spec, "units", "open potential 2 t s + t^2/2 + s^2")


def _add_t12(F: DescSeries) -> DescSeries:
    return DescSeries(F.layout, F.jet + F.layout.t(0, 2))


def perturbed_potential() -> Mutation:
    spec = replace(point().spec, name="point_perturbed_F")
    return Mutation("perturbed_F", spec, "virasoro", "descendent potential shifted by t^1_2 after construction",
                    {"F": _add_t12})


def mutations() -> List[Mutation]:
    return [broken_wdvv(), broken_open_unit(), perturbed_potential()]
