import csv
import io
import json
from fractions import Fraction

import pytest

from conftest import make_tiny_warehouse  # noqa: F401  (fixture helpers live there)
from tcmdw.cube import build_cube
from tcmdw.errors import MissingParam, StaleCube, UnknownReport
from tcmdw.etl import ConformedRow, load
from tcmdw.model import builtin_tcm_schema
from tcmdw.query import MeasureRef, QuerySpec, GroupLevel, oracle_query, resolve_spec, to_table
from tcmdw.report import ReportDef, builtin_report_defs, cooccurrence_counts, render_report, report_def
from tcmdw.storage import Filter, open_warehouse
from tcmdw.values import render_fraction

FIG = {"formula": "Ge Gen Tang", "year": "2010", "country": "China"}


def test_three_templates_with_valid_plans():
    defs = builtin_report_defs()
    assert [d.name for d in defs] == ["ingredient_comparison", "yearly_trend", "herb_cooccurrence"]
    samples = {"formula": "Ge Gen Tang", "year": 2010, "country": "China"}
    schema = builtin_tcm_schema()
    for d in defs:
        filled = d.with_params({p.name: samples[p.name] for p in d.param_specs if p.name in samples})
        for spec in filled.plan():
            resolve_spec(schema, spec)


def test_unknown_report_and_missing_param(seeded_wh, seeded_cube):
    with pytest.raises(UnknownReport):
        report_def("pie_chart")
    with pytest.raises(UnknownReport):
        render_report(seeded_cube, seeded_wh, ReportDef("pie_chart"), "table")
    with pytest.raises(MissingParam):
        render_report(seeded_cube, seeded_wh, report_def("ingredient_comparison", {"formula": "Ge Gen Tang"}))


def test_comparison_values_equal_oracle(seeded_wh, seeded_cube):
    out = render_report(seeded_cube, seeded_wh, report_def("ingredient_comparison", FIG), "csv").content
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["herb", "China avg(quantity)", "overall avg(quantity)", "diff %"]
    base = (Filter("Formula", "formula", ("Ge Gen Tang",)), Filter("Date", "year", (2010,)))
    sc = (MeasureRef("quantity", "sum"), MeasureRef("quantity", "count"))
    herb = (GroupLevel("Herb", "herb"),)
    china = {r[0]: r[1:] for r in oracle_query(seeded_wh, QuerySpec(
        herb, base + (Filter("Source", "country", ("China",)),), sc)).rows}
    overall = {r[0]: r[1:] for r in oracle_query(seeded_wh, QuerySpec(herb, base, sc)).rows}
    assert [r[0] for r in rows[1:]] == sorted(overall)
    for h, c_avg, o_avg, diff in rows[1:]:
        cs, cc = china[h]
        os_, oc = overall[h]
        assert Fraction(c_avg) == Fraction(render_fraction(Fraction(cs, cc), 6))
        assert o_avg == render_fraction(Fraction(os_, oc), 6)
        a, b = Fraction(cs, cc), Fraction(os_, oc)
        assert diff == render_fraction(100 * (a - b) / b, 2)


def test_csv_parse_then_table_equals_direct_table(seeded_wh, seeded_cube):
    for name, params in (("ingredient_comparison", FIG), ("yearly_trend", {"formula": "Gui Zhi Tang"}),
                         ("herb_cooccurrence", {"year": "2011", "top": "10"})):
        d = report_def(name, params)
        text_csv = render_report(seeded_cube, seeded_wh, d, "csv").content
        table = render_report(seeded_cube, seeded_wh, d, "table").content
        parsed = list(csv.reader(io.StringIO(text_csv)))
        assert to_table(parsed[0], parsed[1:]) == table


def test_chartspec_shape(seeded_wh, seeded_cube):
    doc = json.loads(render_report(seeded_cube, seeded_wh, report_def("ingredient_comparison", FIG),
                                   "chartspec").content)
    assert set(doc) >= {"title", "x_axis", "series"}
    assert [s["name"] for s in doc["series"]] == ["China", "Overall"]
    for s in doc["series"]:
        assert all(set(p) == {"x", "y"} for p in s["points"])
    assert len(doc["series"][0]["points"]) == 7


def test_rendering_is_byte_deterministic(seeded_wh, seeded_cube):
    d = report_def("ingredient_comparison", FIG)
    for fmt in ("table", "csv", "chartspec"):
        first = render_report(seeded_cube, seeded_wh, d, fmt).content
        again = render_report(build_cube(seeded_wh, workers=3), seeded_wh, d, fmt).content
        assert first == again


def test_yearly_trend_matches_oracle(seeded_wh, seeded_cube):
    out = render_report(seeded_cube, seeded_wh, report_def("yearly_trend", {"formula": "Ge Gen Tang"}), "csv").content
    rows = list(csv.reader(io.StringIO(out)))[1:]
    ref = oracle_query(seeded_wh, QuerySpec((GroupLevel("Date", "year"),),
                                            (Filter("Formula", "formula", ("Ge Gen Tang",)),),
                                            (MeasureRef("quantity", "sum"), MeasureRef("quantity", "count"))))
    assert rows == [[str(v) for v in r] for r in ref.rows]


def _mini(empty_wh, rows, batch):
    for h in ("A", "B", "C"):
        empty_wh.upsert_member("Herbs", h, {"latin_name": h})
    load(empty_wh, [ConformedRow(r, i) for i, r in enumerate(rows)], batch)
    empty_wh.checkpoint()


def test_cooccurrence_two_prescriptions(empty_wh):
    rows = [{"prescription_id": rx, "Date": 20100101, "Formula": "F", "Herb": h, "Source": "S", "quantity": 5}
            for rx, hs in (("p1", "ABC"), ("p2", "AB")) for h in hs]
    _mini(empty_wh, rows, "co")
    assert cooccurrence_counts(empty_wh) == [("A", "B", 2), ("A", "C", 1), ("B", "C", 1)]
    out = render_report(build_cube(empty_wh), empty_wh, report_def("herb_cooccurrence"), "csv").content
    assert out.splitlines() == ["herb_a,herb_b,prescriptions", "A,B,2", "A,C,1", "B,C,1"]


def test_trend_single_year(empty_wh):
    rows = [{"prescription_id": f"p{i}", "Date": 20100101 + i, "Formula": "F", "Herb": "A", "Source": "S",
             "quantity": 10} for i in range(5)]
    _mini(empty_wh, rows, "t")
    out = render_report(build_cube(empty_wh), empty_wh, report_def("yearly_trend", {"formula": "UNKNOWN"}),
                        "csv").content
    assert out.splitlines()[1:] == ["2010,50,5"]


def test_stale_cube(seeded_wh, fresh_copy):
    cube = build_cube(seeded_wh)
    with open_warehouse(fresh_copy, writable=True) as wh:
        wh.upsert_member("Countries", "Korea", {"iso_code": "KR"})
        wh.checkpoint()
        with pytest.raises(StaleCube):
            render_report(cube, wh, report_def("yearly_trend", {"formula": "Ge Gen Tang"}))
