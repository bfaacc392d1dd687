"""JSON model files.

Every rational is a string ``"p/q"`` (integers may also be given as JSON
integers).  Layout::

    {
      "name": "p1",
      "dimension": 2,
      "metric": [["0", "1"], ["1", "0"]],                  # optional
      "potential": {"monomials": [[[2, 1], "1/2"]],
                    "exp_terms": [{"coeff": "1", "var": [1], "scale": ["1"],
                                   "prefactor_monomial": [0, 0]}]},
      "euler": {"q": ["0", "1"], "r": ["0", "2"], "delta": "1", "r_extra": "0"},
      "open_potential": {...},                               # optional, N+1 variables
      "base_point": ["0", "0"],                             # N entries, N+1 with an open potential
      "truncation": {"jet_order": 8, "D": 8, "P_max": 2, "G_max": 3, "m_max": 3,
                     "lambdas": ["1", "1/3"]}
    }

``potential`` may instead be a list of such objects (a flat F-manifold
given by its vector potential).  ``var``/``scale`` may be scalars for a
single-variable exponent.  Variables are 0-based.  Unknown keys are
rejected.
"""

from __future__ import annotations

import json
from typing import Any, Dict, List, Sequence, Union

from gmpy2 import mpq

from .model import EulerData, ExpTerm, ModelSpec, OpenExt, PotentialExpr, Truncation
from .series import Q

__all__ = ["ModelFileError", "parse_model", "load_model", "spec_to_dict", "dump_model", "save_model"]


class ModelFileError(ValueError):
    """The document is not a valid model file."""


_TOP = {"name", "dimension", "metric", "potential", "euler", "open_potential", "base_point", "truncation"}
_POT = {"monomials", "exp_terms"}
_EXP = {"coeff", "var", "scale", "prefactor_monomial"}
_EUL = {"q", "r", "delta", "r_extra"}
_TRN = {"jet_order", "D", "P_max", "G_max", "m_max", "lambdas"}


def _keys(obj: Any, allowed: set, where: str, required: Sequence[str] = ()) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        raise ModelFileError("%s must be an object" % where)
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ModelFileError("unknown key(s) in %s: %s" % (where, ", ".join(unknown)))
    for k in required:
        if k not in obj:
            raise ModelFileError("%s is missing %r" % (where, k))
    return obj


def _rat(x: Any, where: str) -> mpq:
    if isinstance(x, bool) or not isinstance(x, (int, str)):
        raise ModelFileError("%s: rationals must be strings \"p/q\" or integers, got %r" % (where, x))
    try:
        return Q(x)
    except (ValueError, ZeroDivisionError, TypeError) as e:
        raise ModelFileError("%s: cannot parse rational %r" % (where, x)) from e


def _int(x: Any, where: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ModelFileError("%s must be an integer" % where)
    return x


def _rats(xs: Any, where: str, n: int = -1) -> tuple:
    if not isinstance(xs, list):
        raise ModelFileError("%s must be a list" % where)
    if n >= 0 and len(xs) != n:
        raise ModelFileError("%s must have %d entries" % (where, n))
    return tuple(_rat(x, "%s[%d]" % (where, i)) for i, x in enumerate(xs))


def _ints(xs: Any, where: str, n: int) -> tuple:
    if not isinstance(xs, list) or len(xs) != n:
        raise ModelFileError("%s must be a list of %d integers" % (where, n))
    return tuple(_int(x, where) for x in xs)


def _potential(obj: Any, nvars: int, where: str) -> PotentialExpr:
    _keys(obj, _POT, where)
    mons: Dict[tuple, mpq] = {}
    for i, item in enumerate(obj.get("monomials", [])):
        w = "%s.monomials[%d]" % (where, i)
        if not isinstance(item, list) or len(item) != 2:
            raise ModelFileError("%s must be [exponents, coefficient]" % w)
        ex = _ints(item[0], w, nvars)
        if any(e < 0 for e in ex):
            raise ModelFileError("%s: negative exponent" % w)
        mons[ex] = mons.get(ex, mpq(0)) + _rat(item[1], w)
    exps = []
    for i, item in enumerate(obj.get("exp_terms", [])):
        w = "%s.exp_terms[%d]" % (where, i)
        _keys(item, _EXP, w, required=("coeff", "var", "scale"))
        var, scale = item["var"], item["scale"]
        if not isinstance(var, list):
            var, scale = [var], [scale]
        if not isinstance(scale, list) or len(scale) != len(var) or not var:
            raise ModelFileError("%s: var and scale must have the same length" % w)
        form = []
        for v, s in zip(var, scale):
            v = _int(v, w + ".var")
            if not 0 <= v < nvars:
                raise ModelFileError("%s: variable index %d out of range" % (w, v))
            form.append((v, _rat(s, w + ".scale")))
        pre = _ints(item.get("prefactor_monomial", [0] * nvars), w + ".prefactor_monomial", nvars)
        exps.append(ExpTerm(_rat(item["coeff"], w + ".coeff"), tuple(form), pre))
    return PotentialExpr(nvars, tuple(sorted((k, v) for k, v in mons.items() if v != 0)), tuple(exps))


def parse_model(doc: Union[str, Dict[str, Any]]) -> ModelSpec:
    """Build a :class:`ModelSpec` from a JSON string or an already-decoded object."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as e:
            raise ModelFileError("invalid JSON: %s" % e) from e
    _keys(doc, _TOP, "model", required=("dimension", "potential"))
    N = _int(doc["dimension"], "dimension")
    if N < 1:
        raise ModelFileError("dimension must be positive")
    metric = None
    if doc.get("metric") is not None:
        rows = doc["metric"]
        if not isinstance(rows, list) or len(rows) != N:
            raise ModelFileError("metric must be an %dx%d array" % (N, N))
        metric = tuple(_rats(r, "metric[%d]" % i, N) for i, r in enumerate(rows))
    pot = doc["potential"]
    if isinstance(pot, list):
        potential = tuple(_potential(p, N, "potential[%d]" % i) for i, p in enumerate(pot))
    else:
        potential = _potential(pot, N, "potential")
    euler, r_extra = None, mpq(0)
    if doc.get("euler") is not None:
        e = _keys(doc["euler"], _EUL, "euler", required=("q", "r", "delta"))
        euler = EulerData(_rats(e["q"], "euler.q", N), _rats(e["r"], "euler.r", N), _rat(e["delta"], "euler.delta"))
        r_extra = _rat(e.get("r_extra", 0), "euler.r_extra")
    is_open = doc.get("open_potential") is not None
    base = doc.get("base_point")
    s_base = mpq(0)
    if base is not None:
        base = _rats(base, "base_point", N + 1 if is_open else N)
        if is_open:
            base, s_base = base[:N], base[N]
    open_ext = None
    if is_open:
        open_ext = OpenExt(_potential(doc["open_potential"], N + 1, "open_potential"), r_extra, s_base)
    trunc = Truncation()
    if doc.get("truncation") is not None:
        t = _keys(doc["truncation"], _TRN, "truncation")
        kw: Dict[str, Any] = {k: _int(v, "truncation." + k) for k, v in t.items() if k != "lambdas"}
        if "lambdas" in t:
            kw["lambdas"] = _rats(t["lambdas"], "truncation.lambdas")
        trunc = Truncation(**{**Truncation().__dict__, **kw})
    name = doc.get("name", "")
    if not isinstance(name, str):
        raise ModelFileError("name must be a string")
    try:
        return ModelSpec(N=N, potential=potential, eta=metric, euler=euler, base_point=base or (),
                         open_ext=open_ext, truncation=trunc, name=name)
    except ValueError as e:
        raise ModelFileError(str(e)) from e


def load_model(path: str) -> ModelSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ModelFileError("cannot read %s: %s" % (path, e)) from e
    return parse_model(text)


def _expr_dict(p: PotentialExpr) -> Dict[str, Any]:
    out: Dict[str, Any] = {"monomials": [[list(ex), str(c)] for ex, c in p.monomials]}
    if p.exp_terms:
        out["exp_terms"] = [{"coeff": str(t.coeff), "var": [v for v, _ in t.exponent],
                             "scale": [str(s) for _, s in t.exponent],
                             "prefactor_monomial": list(t.prefactor)} for t in p.exp_terms]
    return out


def spec_to_dict(spec: ModelSpec) -> Dict[str, Any]:
    out: Dict[str, Any] = {"name": spec.name, "dimension": spec.N}
    if spec.eta is not None:
        out["metric"] = [[str(x) for x in row] for row in spec.eta]
    if isinstance(spec.potential, PotentialExpr):
        out["potential"] = _expr_dict(spec.potential)
    else:
        out["potential"] = [_expr_dict(p) for p in spec.potential]
    if spec.euler is not None:
        out["euler"] = {"q": [str(x) for x in spec.euler.q], "r": [str(x) for x in spec.euler.r],
                        "delta": str(spec.euler.delta)}
        if spec.open_ext is not None:
            out["euler"]["r_extra"] = str(spec.open_ext.r_extra)
    base = list(spec.base_point)
    if spec.open_ext is not None:
        out["open_potential"] = _expr_dict(spec.open_ext.Fo)
        base.append(spec.open_ext.s_base)
    out["base_point"] = [str(x) for x in base]
    t = spec.truncation
    out["truncation"] = {"jet_order": t.jet_order, "D": t.D, "P_max": t.P_max, "G_max": t.G_max,
                         "m_max": t.m_max, "lambdas": [str(x) for x in t.lambdas]}
    return out


def dump_model(spec: ModelSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True) + "\n"


def save_model(spec: ModelSpec, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_model(spec))
