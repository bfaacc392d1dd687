import json
import os

import pytest
from gmpy2 import mpq

from openwdvv.catalog import builtin, builtin_ids
from openwdvv.model import PotentialExpr
from openwdvv.modelfile import ModelFileError, dump_model, load_model, parse_model, spec_to_dict
from openwdvv.mutations import broken_wdvv

MODELS = os.path.join(os.path.dirname(__file__), os.pardir, "models")


def _file(ident):
    return ident.replace("(", "_").replace(")", "").replace(",", "_").replace("/", "_").replace("-", "m") + ".json"


@pytest.mark.parametrize("ident", builtin_ids())
def test_round_trip_identity(ident):
    spec = builtin(ident).spec
    again = parse_model(dump_model(spec))
    assert again == spec
    assert dump_model(again) == dump_model(spec)


@pytest.mark.parametrize("ident", builtin_ids())
def test_shipped_model_files_match_exports(ident):
    path = os.path.join(MODELS, _file(ident))
    assert load_model(path) == builtin(ident).spec
    with open(path) as fh:
        assert fh.read() == dump_model(builtin(ident).spec)


def test_shipped_corrupted_fixture():
    assert load_model(os.path.join(MODELS, "corrupted.json")) == broken_wdvv().spec


def _minimal():
    return {"dimension": 1, "metric": [["1"]], "potential": {"monomials": [[[3], "1/6"]]}}


def test_minimal_file_and_defaults():
    spec = parse_model(_minimal())
    assert spec.N == 1 and spec.potential == PotentialExpr.poly(1, {(3,): mpq(1, 6)})
    assert spec.euler is None and spec.open_ext is None


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d.update(extra=1), "unknown key"),
    (lambda d: d["potential"].update(foo=[]), "unknown key"),
    (lambda d: d["potential"]["monomials"].append([[1], 0.5]), "rationals must be strings"),
    (lambda d: d["potential"]["monomials"].append([[1], "1/0"]), "cannot parse"),
    (lambda d: d["potential"]["monomials"].append([[1, 2], "1"]), "must be a list of 1 integers"),
    (lambda d: d.update(metric=[["0"]]), "not invertible"),
    (lambda d: d.pop("dimension"), "missing"),
    (lambda d: d.update(truncation={"jet_order": "8"}), "must be an integer"),
    (lambda d: d["potential"].update(exp_terms=[{"coeff": "1", "var": [3], "scale": ["1"]}]), "out of range"),
])
def test_invalid_documents_rejected(mutate, msg):
    doc = _minimal()
    mutate(doc)
    with pytest.raises(ModelFileError, match=msg):
        parse_model(doc)


def test_invalid_json():
    with pytest.raises(ModelFileError):
        parse_model("{not json")


def test_scalar_exp_term_form_and_flat_f_list():
    doc = {"dimension": 2,
           "potential": [{"monomials": [[[1, 0], "1"]]},
                         {"monomials": [[[0, 1], "1"]], "exp_terms": [{"coeff": "1", "var": 1, "scale": "2"}]}]}
    spec = parse_model(doc)
    assert spec.mode == "flat_f"
    assert spec.potential[1].exp_terms[0].exponent == ((1, mpq(2)),)
    assert json.loads(dump_model(spec))["potential"][1]["exp_terms"][0]["var"] == [1]


def test_rationals_serialised_as_strings():
    d = spec_to_dict(builtin("a2_3spin").spec)
    assert d["euler"]["q"] == ["0", "1/3"]
    assert d["potential"]["monomials"][0][1] in ("1/72", "1/2")
