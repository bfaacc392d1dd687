"""Command-line driver.

::

    openwdvv check MODEL... [--stages=wdvv,units] [--m-max=M] [--jet-order=J]
                            [--lambdas=1,1/3] [--json OUT] [--timings] [--jobs N]
    openwdvv dump MODEL --object={calibration,vtop,potential,open-potential,operator} [--m=M]
    openwdvv list-builtins
    openwdvv export-builtin ID [--out FILE]

``MODEL`` is a JSON model file or ``builtin:<id>``.  Exit codes: 0 all
selected checks pass, 1 a check failed, 2 the input could not be parsed,
3 a depth/truncation or internal error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from typing import Dict, List, Optional, Sequence

from . import calibration as C
from . import hierarchy as H
from . import virasoro as V
from .catalog import UnknownModelError, builtin, builtin_ids
from .model import ModelError, ModelSpec, PreconditionError, _mono_str, open_to_extension
from .modelfile import ModelFileError, dump_model, load_model
from .pipeline import STAGES, run_checks, settings_for
from .series import Jet, Q

EXIT_OK, EXIT_FAIL, EXIT_PARSE, EXIT_ERROR = 0, 1, 2, 3

DUMP_OBJECTS = ("calibration", "vtop", "potential", "open-potential", "operator")


class UsageError(Exception):
    pass


def load(source: str) -> ModelSpec:
    """Read a model file, or a built-in given as ``builtin:<id>``."""
    if source.startswith("builtin:"):
        try:
            return builtin(source[len("builtin:"):]).spec
        except UnknownModelError as e:
            raise ModelFileError(str(e.args[0])) from e
    return load_model(source)


def _split(text: Optional[str]) -> Optional[List[str]]:
    if text is None:
        return None
    return [x.strip() for x in text.split(",") if x.strip()]


def jet_to_dict(j: Jet) -> Dict[str, str]:
    """``{monomial: "p/q"}`` in the jet's canonical term order."""
    return {_mono_str(j.ring, ex): str(c) for ex, c in j.terms()}


def _series_dict(j: Jet) -> Dict[str, object]:
    return {"valid_order": j.valid_order, "terms": [[_mono_str(j.ring, ex), str(c)] for ex, c in j.terms()]}


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def _check_one(args):
    source, stages, m_max, jet_order, lambdas, timings = args
    spec = load(source)
    res = run_checks(spec, stages=stages, m_max=m_max, jet_order=jet_order, lambdas=lambdas)
    return res.exit_code, res.as_dict(timings), res.to_text(timings)


def cmd_check(sources: Sequence[str], stages: Optional[Sequence[str]] = None, m_max: Optional[int] = None,
              jet_order: Optional[int] = None, lambdas: Optional[Sequence[str]] = None, json_out: Optional[str] = None,
              timings: bool = False, jobs: int = 1, out=None) -> int:
    out = sys.stdout if out is None else out
    if stages is not None:
        bad = [s for s in stages if s != "all" and s not in STAGES]
        if bad:
            raise UsageError("unknown stage %r (known: %s)" % (bad[0], ", ".join(STAGES)))
    lam = None if lambdas is None else [Q(x) for x in lambdas]
    # parse everything first so a malformed file is a parse error, not a failed run
    for s in sources:
        load(s)
    work = [(s, stages, m_max, jet_order, lam, timings) for s in sources]
    if jobs > 1 and len(work) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_check_one, work))  # map keeps input order
    else:
        results = [_check_one(w) for w in work]
    for _, _, text in results:
        if json_out != "-":
            out.write(text)
    docs = [d for _, d, _ in results]
    if json_out is not None:
        doc = docs[0] if len(docs) == 1 else {"results": docs}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        if json_out == "-":
            out.write(text)
        else:
            with open(json_out, "w", encoding="utf-8") as fh:
                fh.write(text)
    codes = [c for c, _, _ in results]
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_FAIL if any(codes) else EXIT_OK


# ---------------------------------------------------------------------------
# dump
# ---------------------------------------------------------------------------

def dump_object(spec: ModelSpec, obj: str, m: int = 0, D: Optional[int] = None, G: Optional[int] = None,
                P: Optional[int] = None, jet_order: Optional[int] = None) -> Dict[str, object]:
    """Serialisable form of one computed object (rationals as strings)."""
    if obj not in DUMP_OBJECTS:
        raise UsageError("unknown object %r (known: %s)" % (obj, ", ".join(DUMP_OBJECTS)))
    st = settings_for(spec, m_max=max(m, spec.truncation.m_max), jet_order=jet_order)
    P = st.P_max if P is None else P
    G = st.G_max if G is None else G
    out: Dict[str, object] = {"model": spec.name, "object": obj}
    if obj == "calibration":
        D = spec.truncation.D if D is None else D
        cal = C.calibrate(spec, D=D, jet_order=st.jet_order)
        N = cal.N

        def mats(get):
            return {str(d): [[jet_to_dict(get(d).entries[a][b]) for b in range(N)] for a in range(N)]
                    for d in range(-1, D + 1)}

        out.update({"D": D, "q": [str(x) for x in cal.q], "base_norm": [str(x) for x in cal.base_norm],
                    "R": [[[str(x) for x in row] for row in Rn] for Rn in cal.R],
                    "upper": mats(cal.upper), "lower": mats(cal.lower)})
        return out
    P_ext = P + max(m, 0) if obj == "operator" else P
    D_need = max(st.D, P + P_ext, m + P + 2)
    cal = C.calibrate(spec, D=D_need, jet_order=st.jet_order)
    if obj == "operator":
        if spec.open_ext is not None:
            ecal = C.extend_calibration(cal, open_to_extension(spec, st.jet_order))
            op = V.build_open(C.open_calibration(ecal, cal), m, window=P)
        else:
            op = V.build_closed(cal, m, window=P)
        out["operator"] = op.table_dict()
        return out
    if obj == "open-potential" or (spec.open_ext is not None and obj == "vtop"):
        if spec.open_ext is None:
            raise UsageError("model has no open potential")
        ecal = C.extend_calibration(cal, open_to_extension(spec, st.jet_order))
        top = H.topological_solution(ecal, P, G, P_ext=P_ext)
        if obj == "vtop":
            out["vtop"] = [_series_dict(v.jet) for v in top.v]
        else:
            out["Fo"] = _series_dict(H.open_descendent_potential(C.open_calibration(ecal, cal), top).jet)
        out["layout"] = {"N": top.layout.N, "P": P, "P_ext": P_ext, "G": G, "J": top.layout.J}
        return out
    top = H.topological_solution(cal, P, G, P_ext=P_ext)
    out["layout"] = {"N": top.layout.N, "P": P, "P_ext": P_ext, "G": G, "J": top.layout.J}
    if obj == "vtop":
        out["vtop"] = [_series_dict(v.jet) for v in top.v]
    else:
        if spec.mode != "frobenius":
            raise UsageError("scalar descendent potential needs a Frobenius manifold")
        out["F"] = _series_dict(H.descendent_potential(cal, top).jet)
    return out


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="openwdvv", description="Exact verification of (open) WDVV, descendent "
                                "potentials and genus-zero Virasoro constraints.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="run the check pipeline on model files")
    c.add_argument("models", nargs="+", help="model file(s) or builtin:<id>")
    c.add_argument("--stages", help="comma-separated stages (default: all): " + ",".join(STAGES))
    c.add_argument("--m-max", type=int, dest="m_max")
    c.add_argument("--jet-order", type=int, dest="jet_order")
    c.add_argument("--lambdas", help="comma-separated rationals for the flat-F samples")
    c.add_argument("--json", dest="json_out", metavar="OUT", help="write the machine report (- for stdout)")
    c.add_argument("--timings", action="store_true", help="include wall-clock timings (not deterministic)")
    c.add_argument("--jobs", type=int, default=1, help="worker processes for several models")

    d = sub.add_parser("dump", help="serialise a computed object")
    d.add_argument("model")
    d.add_argument("--object", required=True, choices=DUMP_OBJECTS)
    d.add_argument("--m", type=int, default=0, help="operator level")
    d.add_argument("--D", type=int, help="calibration depth")
    d.add_argument("--G-max", type=int, dest="G_max")
    d.add_argument("--P-max", type=int, dest="P_max")
    d.add_argument("--jet-order", type=int, dest="jet_order")
    d.add_argument("--out", help="output file (default stdout)")

    sub.add_parser("list-builtins", help="list the built-in models")

    e = sub.add_parser("export-builtin", help="write a built-in as a model file")
    e.add_argument("id")
    e.add_argument("--out", help="output file (default stdout)")
    return p


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: usage errors are parse errors
        return EXIT_OK if e.code == 0 else EXIT_PARSE
    try:
        if args.command == "check":
            return cmd_check(args.models, _split(args.stages), args.m_max, args.jet_order, _split(args.lambdas),
                             args.json_out, args.timings, args.jobs, out)
        if args.command == "dump":
            spec = load(args.model)
            doc = dump_object(spec, args.object, args.m, args.D, args.G_max, args.P_max, args.jet_order)
            text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                out.write(text)
            return EXIT_OK
        if args.command == "list-builtins":
            for ident in builtin_ids():
                b = builtin(ident)
                kind = "open" if b.spec.open_ext is not None else "closed"
                out.write("%-18s N=%d %-6s %s\n" % (ident, b.spec.N, kind, b.provenance.get(
                    "potential", b.provenance.get("open_potential", ""))))
            return EXIT_OK
        if args.command == "export-builtin":
            text = dump_model(builtin(args.id).spec)
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    fh.write(text)
            else:
                out.write(text)
            return EXIT_OK
    except (ModelFileError, UsageError) as e:
        sys.stderr.write("error: %s\n" % e)
        return EXIT_PARSE
    except UnknownModelError as e:
        sys.stderr.write("error: %s\n" % (e.args[0] if e.args else e))
        return EXIT_PARSE
    except PreconditionError as e:
        sys.stderr.write("check failed: %s\n" % e)
        return EXIT_FAIL
    except (C.DepthError, H.HierarchyError, V.WindowError, ModelError) as e:
        sys.stderr.write("error: %s: %s\n" % (type(e).__name__, e))
        return EXIT_ERROR
    except Exception as e:  # pragma: no cover - last-resort reporting
        sys.stderr.write("internal error: %s: %s\n" % (type(e).__name__, e))
        return EXIT_ERROR
    return EXIT_PARSE  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
