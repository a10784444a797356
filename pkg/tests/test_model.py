import copy
import json
import re

import pytest
from hypothesis import given, settings, strategies as st

from tcmdw.errors import DuplicateName, MissingSection, SchemaSyntaxError
from tcmdw.model import (
    TCM_SCHEMA_DOC,
    builtin_tcm_schema,
    dump_schema,
    enumerate_lattice,
    parse_schema,
    schema_from_dict,
    schema_to_dict,
    validate_schema,
)
from tcmdw.values import ALL


def doc():
    return copy.deepcopy(TCM_SCHEMA_DOC)


def resolve(document, path):
    """Follow a ``$.a.b[2].c`` location into a parsed document; KeyError/IndexError if absent."""
    assert path.startswith("$")
    node = document
    for name, idx in re.findall(r"\.([A-Za-z_]+)|\[(\d+)\]", path[1:]):
        node = node[name] if name else node[int(idx)]
    return node


def test_builtin_tables():
    s = builtin_tcm_schema()
    names = {s.fact.name} | {t.name for t in s.lookup_tables}
    assert names == {"FormulaList", "Formulas", "Herbs", "Sources", "Dates",
                     "FormulaTypes", "HerbTypes", "Countries", "SourceTypes"}
    assert len(s.lookup_tables) == 8
    assert s.fact.measure("quantity").unit == "milligrams"
    assert [n for n, _ in s.fact.degenerate_keys] == ["prescription_id"]


def test_builtin_validates_clean():
    r = validate_schema(builtin_tcm_schema())
    assert r.valid and r.issues == ()


def test_builtin_hierarchies():
    s = builtin_tcm_schema()
    assert s.dimension("Date").hierarchy("calendar").level_names == ("day", "month", "quarter", "year")
    src = s.dimension("Source")
    assert {h.name for h in src.hierarchies} == {"by_type", "by_geography"}
    assert src.table("Sources").parents == ("SourceTypes", "Countries")
    assert src.finer_or_equal("source", "country")
    assert not src.finer_or_equal("source_type", "country")


def test_lattice_180_and_endpoints():
    s = builtin_tcm_schema()
    lat = enumerate_lattice(s)
    assert len(lat) == 180 == 5 * 3 * 3 * 4
    assert len(set(lat)) == 180
    assert ("day", "formula", "herb", "source") in lat
    assert (ALL,) * 4 in lat


def test_lattice_one_level_one_dimension():
    d = {
        "name": "one",
        "dimensions": [{"name": "D", "tables": [{"name": "T", "natural_key": "k",
                                                 "attributes": [{"name": "k", "kind": "text"}]}],
                        "hierarchies": [{"name": "h", "levels": [{"level": "k", "attribute": "k"}]}]}],
        "fact": {"name": "F", "dimensions": ["D"], "measures": [{"name": "m", "unit": "u", "min": 1}]},
    }
    lat = enumerate_lattice(schema_from_dict(d))
    assert len(lat) == 2 and set(lat) == {("k",), (ALL,)}


def test_round_trip_builtin():
    s = builtin_tcm_schema()
    again = parse_schema(dump_schema(s))
    assert again == s
    assert schema_to_dict(again) == schema_to_dict(s)


def test_empty_dimensions_is_missing_section():
    d = doc()
    d["dimensions"] = []
    with pytest.raises(MissingSection):
        schema_from_dict(d)


def test_missing_fact_is_missing_section():
    d = doc()
    del d["fact"]
    with pytest.raises(MissingSection):
        schema_from_dict(d)


def test_duplicate_table_name():
    d = doc()
    herb_dim = next(x for x in d["dimensions"] if x["name"] == "Herb")
    herb_dim["tables"].append(copy.deepcopy(herb_dim["tables"][0]))
    with pytest.raises(DuplicateName):
        schema_from_dict(d)


def test_unknown_key_is_syntax_error():
    d = doc()
    d["facts"] = {}
    with pytest.raises(SchemaSyntaxError):
        schema_from_dict(d)


def test_malformed_json_reports_position():
    text = dump_schema(builtin_tcm_schema())
    broken = text.replace('"FormulaList"', '"FormulaList",,', 1)
    with pytest.raises(SchemaSyntaxError) as ei:
        parse_schema(broken)
    assert ei.value.line is not None and ei.value.line > 1
    assert ei.value.column is not None


def test_unresolved_dimension_single_error():
    d = doc()
    d["fact"]["dimensions"].append("Patients")
    r = validate_schema(schema_from_dict(d))
    assert [i.code for i in r.errors] == ["UnresolvedDimension"]
    assert resolve(d, r.errors[0].location) == "Patients"


def test_two_table_parent_cycle_single_error():
    d = {
        "name": "cyc",
        "dimensions": [{"name": "D", "tables": [
            {"name": "A", "natural_key": "a", "attributes": [{"name": "a", "kind": "text"}], "parent": "B"},
            {"name": "B", "natural_key": "b", "attributes": [{"name": "b", "kind": "text"}], "parent": "A"},
        ], "hierarchies": []}],
        "fact": {"name": "F", "dimensions": ["D"], "measures": [{"name": "m", "unit": "u", "min": 1}]},
    }
    r = validate_schema(schema_from_dict(d))
    assert [i.code for i in r.errors] == ["ParentCycle"]


def test_level_on_unknown_attribute():
    d = doc()
    herb = next(x for x in d["dimensions"] if x["name"] == "Herb")
    herb["hierarchies"][0]["levels"][1]["attribute"] = "potency"
    r = validate_schema(schema_from_dict(d))
    assert "UnknownLevelAttribute" in [i.code for i in r.errors]


def test_natural_key_not_an_attribute():
    d = doc()
    d["dimensions"][0]["tables"][0]["natural_key"] = "date"
    r = validate_schema(schema_from_dict(d))
    assert "NaturalKeyMissing" in [i.code for i in r.errors]


# Mutations that each break one invariant; every reported location must resolve.
def _mutations():
    def unresolved(d):
        d["fact"]["dimensions"][1] = "Nope"

    def bad_parent(d):
        d["dimensions"][1]["tables"][0]["parent"] = "Ghost"

    def nk(d):
        d["dimensions"][2]["tables"][1]["natural_key"] = "ghost"

    def lvl(d):
        d["dimensions"][3]["hierarchies"][1]["levels"][1]["attribute"] = "ghost"

    def dup_attr(d):
        t = d["dimensions"][3]["tables"][2]
        t["attributes"].append(dict(t["attributes"][0]))

    def explicit_all(d):
        d["dimensions"][0]["hierarchies"][0]["levels"].append({"level": "All", "attribute": "year"})

    def dup_measure(d):
        d["fact"]["measures"].append(dict(d["fact"]["measures"][0]))

    def cycle(d):
        d["dimensions"][1]["tables"][1]["parent"] = "Formulas"

    return [unresolved, bad_parent, nk, lvl, dup_attr, explicit_all, dup_measure, cycle]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(_mutations()), min_size=1, max_size=4, unique=True))
def test_every_error_location_resolves(muts):
    d = doc()
    for m in muts:
        m(d)
    r = validate_schema(schema_from_dict(d))
    assert not r.valid
    for issue in r.issues:
        resolve(d, issue.location)


def test_valid_iff_no_errors():
    d = doc()
    d["dimensions"].append({"name": "Extra", "tables": [
        {"name": "Extras", "natural_key": "x", "attributes": [{"name": "x", "kind": "text"}]}],
        "hierarchies": [{"name": "h", "levels": [{"level": "x", "attribute": "x"}]}]})
    r = validate_schema(schema_from_dict(d))
    assert r.valid
    assert [i.code for i in r.warnings] == ["UnreferencedDimension"]


def test_description_survives_round_trip():
    s = parse_schema(json.dumps(doc()))
    assert s.table("Countries").attribute("country").description == "prescribing country"
