"""Staged check pipeline.

Stages run in dependency order

    wdvv -> units -> euler -> calibrate -> hierarchy -> trr -> virasoro
         -> open-virasoro -> commutators

Selecting a stage also selects its prerequisites.  A stage whose
prerequisite failed is reported as ``skipped``; stages that do not apply to
a model (an open stage for a closed model, say) are reported as ``n/a``.
Depth/truncation problems and unexpected exceptions are reported as
``error``.
"""

from __future__ import annotations

import json
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from gmpy2 import mpq

from . import calibration as C
from . import hierarchy as H
from . import model as M
from . import virasoro as V
from .model import ModelSpec, ResidualReport

__all__ = ["STAGES", "PREREQUISITES", "StageResult", "PipelineResult", "Settings", "settings_for",
           "resolve_stages", "run_checks"]

STAGES = ("wdvv", "units", "euler", "calibrate", "hierarchy", "trr", "virasoro", "open-virasoro", "commutators")

PREREQUISITES: Dict[str, Sequence[str]] = {
    "wdvv": (),
    "units": (),
    "euler": (),
    "calibrate": ("wdvv", "units", "euler"),
    "hierarchy": ("calibrate",),
    "trr": ("hierarchy",),
    "virasoro": ("hierarchy",),
    "open-virasoro": ("hierarchy",),
    "commutators": ("calibrate",),
}

PASS, FAIL, SKIPPED, NA, ERROR = "pass", "fail", "skipped", "n/a", "error"


@dataclass
class StageResult:
    name: str
    status: str
    reports: List[ResidualReport] = field(default_factory=list)
    message: str = ""
    seconds: float = 0.0

    @property
    def first_failure(self) -> Optional[ResidualReport]:
        for r in self.reports:
            if not r.is_zero:
                return r
        return None

    def as_dict(self, timings: bool = False) -> Dict[str, object]:
        out: Dict[str, object] = {"stage": self.name, "status": self.status,
                                  "checks": len(self.reports),
                                  "failed": sum(1 for r in self.reports if not r.is_zero)}
        if self.message:
            out["message"] = self.message
        ff = self.first_failure
        if ff is not None:
            out["first_failure"] = ff.as_dict()
        if self.reports:
            out["min_valid_order"] = min(r.valid_order for r in self.reports)
        out["reports"] = [r.as_dict() for r in self.reports]
        if timings:
            out["seconds"] = round(self.seconds, 3)
        return out


@dataclass(frozen=True)
class Settings:
    """Effective truncation of a run (written into every report)."""

    jet_order: int
    D: int
    P_max: int
    G_max: int
    P_ext: int
    m_max: int
    lambdas: tuple

    def as_dict(self) -> Dict[str, object]:
        return {"jet_order": self.jet_order, "D": self.D, "P_max": self.P_max, "G_max": self.G_max,
                "P_ext": self.P_ext, "m_max": self.m_max, "lambdas": [str(x) for x in self.lambdas]}


def settings_for(spec: ModelSpec, m_max: Optional[int] = None, jet_order: Optional[int] = None,
                 lambdas: Optional[Sequence[object]] = None) -> Settings:
    """Resolve the truncation: the calibration depth is raised to what the
    descendent potentials and the Virasoro sums at level ``m_max`` consume."""
    tr = spec.truncation
    m_max = tr.m_max if m_max is None else m_max
    jet = tr.jet_order if jet_order is None else jet_order
    P = tr.P_max
    P_ext = P + max(m_max, 0)
    # descendent potentials use Omega up to depth P + P_ext, the Virasoro
    # sums at level m up to m + P + 2
    need = max(P + P_ext, m_max + P + 2)
    D = max(tr.D, need)
    lam = tuple(M.Q(x) for x in (tr.lambdas if lambdas is None else lambdas))
    return Settings(jet, D, P, tr.G_max, P_ext, m_max, lam)


def resolve_stages(selected: Optional[Sequence[str]]) -> List[str]:
    if selected is None or list(selected) in (["all"], []):
        return list(STAGES)
    want = set()

    def add(s):
        if s not in PREREQUISITES:
            raise ValueError("unknown stage %r (known: %s)" % (s, ", ".join(STAGES)))
        if s in want:
            return
        want.add(s)
        for p in PREREQUISITES[s]:
            add(p)

    for s in selected:
        if s == "all":
            return list(STAGES)
        add(s)
    return [s for s in STAGES if s in want]


class _NotApplicable(Exception):
    pass


class _Context:
    def __init__(self, spec: ModelSpec, st: Settings):
        self.spec = spec
        self.st = st
        self.cal = None
        self.ecal = None
        self.ocal = None
        self.top = None
        self.etop = None
        self.F = None
        self.Fe = None
        self.Fo = None
        self.Fv_res = None
        self.Fv_ext = None

    @property
    def is_open(self) -> bool:
        return self.spec.open_ext is not None

    @property
    def frobenius(self) -> bool:
        return self.spec.mode == "frobenius"

    def samples(self, m: int, cal) -> List[mpq]:
        return V.lambda_samples(self.st.lambdas, m, cal.delta)


def _stage_wdvv(cx: _Context) -> List[ResidualReport]:
    reps = M.wdvv_residual(cx.spec, cx.st.jet_order)
    if cx.is_open:
        reps = reps + M.open_wdvv_residual(cx.spec, cx.st.jet_order)
    return reps


def _stage_units(cx: _Context) -> List[ResidualReport]:
    return [M.unit_checks(cx.spec, cx.st.jet_order)]


def _stage_euler(cx: _Context) -> List[ResidualReport]:
    if cx.spec.euler is None:
        raise _NotApplicable("no Euler data")
    return [M.euler_residual(cx.spec, cx.st.jet_order), M.grading_check(cx.spec)]


def _stage_calibrate(cx: _Context) -> List[ResidualReport]:
    st = cx.st
    cal = C.calibrate(cx.spec, D=st.D, jet_order=st.jet_order, strict=False)
    cx.cal = cal
    reps = list(cal.integrability)
    reps.append(C.resonance_residual(cal.q, cal.R))
    reps.append(C.upper_lower_residual(cal))
    reps += C.homogeneity_residuals(cal)
    if cx.frobenius:
        reps += C.frobenius_symmetry_residuals(cal)
    reps += V.c_mn_residuals(cal, st.m_max, cx.samples(st.m_max, cal))
    if cx.is_open:
        ext = M.open_to_extension(cx.spec, st.jet_order)
        ecal = C.extend_calibration(cal, ext, strict=False)
        cx.ecal = ecal
        reps += list(ecal.integrability)
        reps += C.extension_property_residuals(cal, ecal)
        oc = C.open_calibration(ecal, cal, check=False)
        cx.ocal = oc
        reps += C.open_calibration_residuals(oc)
        reps += V.c_mn_residuals(ecal, st.m_max, cx.samples(st.m_max, ecal))
    return reps


def _stage_hierarchy(cx: _Context) -> List[ResidualReport]:
    st = cx.st
    cal = cx.cal
    top = H.topological_solution(cal, st.P_max, st.G_max, P_ext=st.P_ext)
    cx.top = top
    reps = H.string_dilaton_residuals(top)
    if cx.frobenius:
        cx.F = H.descendent_potential(cal, top)
        reps.append(H.string_equation_residual(cx.F, top, cx.spec.eta))
        reps.append(H.restriction_residual(cx.F, top, cx.spec.F(st.jet_order)))
    Fv = H.descendent_vector_potentials(cal, top, range(-1, st.P_max))
    reps += H.vector_potential_residuals(cal, top, Fv, cx.spec.vector_potential(st.jet_order))
    if cx.frobenius:
        reps += H.frobenius_cross_check(cx.F, Fv, cx.spec.eta_inv)
    lo = -(st.P_max + 1)
    cx.Fv_res = H.descendent_vector_potentials(cal, top, range(lo, st.m_max + 2), resolved_only=True)
    if cx.is_open:
        etop = H.topological_solution(cx.ecal, st.P_max, st.G_max, P_ext=st.P_ext, J=top.layout.J)
        cx.etop = etop
        reps += H.string_dilaton_residuals(etop)
        cx.Fe = H.descendent_potential(cal, etop)
        cx.Fo = H.open_descendent_potential(cx.ocal, etop)
        reps.append(H.open_restriction_residual(cx.Fo, etop, cx.spec.Fo(st.jet_order)))
        cx.Fv_ext = H.descendent_vector_potentials(cx.ecal, etop, range(lo, st.m_max + 2), resolved_only=True)
    return reps


def _stage_trr(cx: _Context) -> List[ResidualReport]:
    reps: List[ResidualReport] = []
    if cx.frobenius:
        reps += H.trr_residuals(cx.F, cx.top, cx.spec.eta_inv)
    if cx.is_open:
        reps += H.open_trr_residuals(cx.Fe, cx.Fo, cx.spec.eta_inv)
        reps += H.point_open_reconstruction_residuals(cx.Fo, min(3, cx.etop.layout.P))
    if not reps:
        raise _NotApplicable("no scalar descendent potential")
    return reps


def _stage_virasoro(cx: _Context) -> List[ResidualReport]:
    st = cx.st
    cal = cx.cal
    reps: List[ResidualReport] = []
    for m in range(-1, st.m_max + 1):
        if cx.frobenius and cal.frobenius_symmetric:
            op = V.build_closed(cal, m, window=st.P_max)
            reps.append(V.closed_residual(op, cx.F).report())
            reps.append(V.support_soundness(
                lambda s, m=m: V.build_closed_from_data(cal.mu(), cal.R_sum, cal.q, cx.spec.eta, m,
                                                        st.P_max, cal.base_norm, slack=s)))
        for lam in cx.samples(m, cal):
            reps += [r.report() for r in V.flat_f_residual(cal, cx.top, cx.Fv_res, m, lam)]
    return reps


def _stage_open_virasoro(cx: _Context) -> List[ResidualReport]:
    if not cx.is_open:
        raise _NotApplicable("no open extension")
    st = cx.st
    cal, ecal, oc = cx.cal, cx.ecal, cx.ocal
    reps: List[ResidualReport] = []
    for m in range(-1, st.m_max + 1):
        op = V.build_open(oc, m, window=st.P_max)
        r1, r2 = V.open_residual(op, cx.Fe, cx.Fo)
        reps.append(r1.report())
        closed = V.closed_residual(V.build_closed(cal, m, window=st.P_max), cx.Fe)
        reps.append(ResidualReport.from_jet("eps^-2 coefficient minus closed residual m=%d" % m,
                                            r2.jet - closed.jet))
        lam0 = (3 - ecal.delta) / 2
        for lam in cx.samples(m, ecal):
            A = V.flat_f_residual(ecal, cx.etop, cx.Fv_ext, m, lam)
            reps += [a.report() for a in A]
            if lam == lam0:
                reps.append(ResidualReport.from_jet("A^%d_%d minus open residual" % (ecal.N, m),
                                                    A[-1].jet - r1.jet))
        lg = V.last_group_coefficients(oc, m)
        bad = sorted(k for k, v in lg.items() if v)
        reps.append(ResidualReport("boundary group of A^%d_%d vanishes" % (ecal.N, m), 0, not bad,
                                   None if not bad else ("d1,d2=%s" % (bad[0],), str(lg[bad[0]])),
                                   {"entries": len(lg)}))
    return reps


def _stage_commutators(cx: _Context) -> List[ResidualReport]:
    st = cx.st
    cal = cx.cal
    levels = list(range(-1, st.m_max + 1))
    reps: List[ResidualReport] = []
    if cx.frobenius and cal.frobenius_symmetric and cal.delta is not None:
        reps += V.commutator_suite(lambda m, W: V.build_closed(cal, m, window=W), levels, st.P_max, cal.N,
                                   label="L")
    if cx.is_open:
        reps += V.commutator_suite(lambda m, W: V.build_open(cx.ocal, m, window=W), levels, st.P_max,
                                   cal.N + 1, label="Lo")
    if not reps:
        raise _NotApplicable("no Virasoro operators for this model")
    return reps


_RUNNERS = {
    "wdvv": _stage_wdvv,
    "units": _stage_units,
    "euler": _stage_euler,
    "calibrate": _stage_calibrate,
    "hierarchy": _stage_hierarchy,
    "trr": _stage_trr,
    "virasoro": _stage_virasoro,
    "open-virasoro": _stage_open_virasoro,
    "commutators": _stage_commutators,
}


@dataclass
class PipelineResult:
    model: str
    settings: Settings
    stages: List[StageResult]

    @property
    def ok(self) -> bool:
        return all(s.status in (PASS, NA) for s in self.stages)

    @property
    def exit_code(self) -> int:
        if any(s.status == ERROR for s in self.stages):
            return 3
        return 0 if self.ok else 1

    def stage(self, name: str) -> StageResult:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(name)

    def reports(self) -> List[ResidualReport]:
        return [r for s in self.stages for r in s.reports]

    @property
    def first_failure(self):
        for s in self.stages:
            if s.status in (FAIL, ERROR):
                return s
        return None

    def as_dict(self, timings: bool = False) -> Dict[str, object]:
        return {"model": self.model, "settings": self.settings.as_dict(), "ok": self.ok,
                "exit_code": self.exit_code,
                "stages": [s.as_dict(timings) for s in self.stages]}

    def to_json(self, timings: bool = False) -> str:
        return json.dumps(self.as_dict(timings), indent=2, sort_keys=True) + "\n"

    def to_text(self, timings: bool = False) -> str:
        lines = ["model %s  (jet %d, D %d, P %d, G %d, P_ext %d, m_max %d)" % (
            self.model, self.settings.jet_order, self.settings.D, self.settings.P_max, self.settings.G_max,
            self.settings.P_ext, self.settings.m_max)]
        for s in self.stages:
            bad = sum(1 for r in s.reports if not r.is_zero)
            line = "  %-14s %-8s %4d checks" % (s.name, s.status, len(s.reports))
            if bad:
                line += ", %d failed" % bad
            if timings:
                line += "  %.2fs" % s.seconds
            lines.append(line)
            ff = s.first_failure
            if ff is not None:
                loc = ff.first_nonzero
                lines.append("      first failure: %s at %s = %s" % (ff.name, loc[0], loc[1]) if loc
                             else "      first failure: %s" % ff.name)
            if s.message and s.status != PASS:
                lines.append("      %s" % s.message)
        lines.append("result: %s" % ("PASS" if self.ok else "FAIL"))
        return "\n".join(lines) + "\n"


def run_checks(spec: ModelSpec, stages: Optional[Sequence[str]] = None, m_max: Optional[int] = None,
               jet_order: Optional[int] = None, lambdas: Optional[Sequence[object]] = None,
               faults: Optional[Dict[str, Callable]] = None) -> PipelineResult:
    """Run the selected stages (with prerequisites) and collect the reports.

    ``faults`` maps ``"F"``/``"Fo"`` to a function applied to that potential
    once the hierarchy stage has built (and checked) it; used by the
    negative-control fixtures.
    """
    todo = resolve_stages(stages)
    st = settings_for(spec, m_max, jet_order, lambdas)
    cx = _Context(spec, st)
    results: Dict[str, StageResult] = {}
    for name in todo:
        pre = [results[p] for p in PREREQUISITES[name] if p in results]
        blocked = [p.name for p in pre if p.status not in (PASS, NA)]
        if blocked:
            results[name] = StageResult(name, SKIPPED, message="prerequisite %s did not pass" % blocked[0])
            continue
        t0 = time.perf_counter()
        try:
            reps = _RUNNERS[name](cx)
            status = PASS if all(r.is_zero for r in reps) else FAIL
            res = StageResult(name, status, reps)
        except _NotApplicable as e:
            res = StageResult(name, NA, message=str(e))
        except M.PreconditionError as e:
            res = StageResult(name, FAIL, list(e.reports), message=str(e))
        except (C.DepthError, H.HierarchyError, V.WindowError) as e:
            res = StageResult(name, ERROR, message="%s: %s" % (type(e).__name__, e))
        except Exception as e:  # internal error: reported, never swallowed silently
            res = StageResult(name, ERROR, message="%s: %s\n%s" % (type(e).__name__, e,
                                                                   traceback.format_exc(limit=3)))
        res.seconds = time.perf_counter() - t0
        results[name] = res
        if name == "hierarchy" and faults:
            for key, fn in sorted(faults.items()):
                if key not in ("F", "Fo"):
                    raise ValueError("unknown fault target %r" % key)
                if key == "F":
                    cx.F = fn(cx.F) if cx.F is not None else None
                    cx.Fe = fn(cx.Fe) if cx.Fe is not None else None
                else:
                    cx.Fo = fn(cx.Fo) if cx.Fo is not None else None
    return PipelineResult(spec.name or "model", st, [results[n] for n in todo])
