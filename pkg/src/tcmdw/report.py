"""Built-in analytical reports rendered from a cube.

Three reports are defined:

``ingredient_comparison``  average quantity per herb of one formula in one year,
    for one country next to the overall (country at All) average, with the
    relative difference ``100 * (country - overall) / overall``.
``yearly_trend``           sum and count of quantity per year for one formula.
``herb_cooccurrence``      number of distinct prescriptions containing each
    unordered herb pair. Prescriptions are identified by the degenerate key,
    which the cube does not carry, so this one reads the fact table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import combinations

from .cube import Cube
from .errors import InvalidQuery, MissingParam, StaleCube, UnknownReport
from .query import GroupLevel, MeasureRef, QuerySpec, to_csv, to_table
from .storage import Filter, Warehouse
from .values import render_avg, render_fraction, value_sort_key

FORMATS = ("table", "csv", "chartspec")


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str  # "text" | "integer"
    required: bool = True
    default: object = None
    doc: str = ""


@dataclass(frozen=True)
class ReportDef:
    name: str
    params: dict = field(default_factory=dict)
    param_specs: tuple[ParamSpec, ...] = ()
    description: str = ""

    def with_params(self, params: dict) -> "ReportDef":
        merged = dict(self.params)
        merged.update(params)
        return replace(self, params=merged)

    def resolved(self) -> dict:
        """Params with defaults applied and kinds checked."""
        out = {}
        known = {p.name for p in self.param_specs}
        extra = sorted(set(self.params) - known)
        if extra:
            raise InvalidQuery(f"{self.name} does not take parameter(s) {', '.join(extra)}")
        for p in self.param_specs:
            value = self.params.get(p.name)
            if value is None or value == "":
                if p.required:
                    raise MissingParam(f"{self.name} requires parameter {p.name!r}")
                out[p.name] = p.default
                continue
            if p.kind == "integer":
                try:
                    value = int(value)
                except (TypeError, ValueError):
                    raise InvalidQuery(f"parameter {p.name} must be an integer, got {value!r}") from None
            else:
                value = str(value)
            out[p.name] = value
        return out

    def plan(self) -> list[QuerySpec]:
        """Query specs the report is answered from."""
        p = self.resolved()
        return _PLANS[self.name](p)


@dataclass(frozen=True)
class RenderedReport:
    format: str
    content: str


# -- plans ------------------------------------------------------------------

_SUM_COUNT = (MeasureRef("quantity", "sum"), MeasureRef("quantity", "count"))


def _formula_filter(p) -> tuple:
    return (Filter("Formula", "formula", (p["formula"],), "by_type"),) if p.get("formula") else ()


def _year_filter(p) -> tuple:
    return (Filter("Date", "year", (p["year"],), "calendar"),) if p.get("year") is not None else ()


def _comparison_plan(p):
    herb = (GroupLevel("Herb", "herb", "by_type"),)
    base = _formula_filter(p) + _year_filter(p)
    country = Filter("Source", "country", (p["country"],), "by_geography")
    return [QuerySpec(herb, base + (country,), _SUM_COUNT), QuerySpec(herb, base, _SUM_COUNT)]


def _trend_plan(p):
    return [QuerySpec((GroupLevel("Date", "year", "calendar"),), _formula_filter(p), _SUM_COUNT)]


def _cooccurrence_plan(p):
    return [QuerySpec((GroupLevel("Herb", "herb", "by_type"),),
                      _formula_filter(p) + _year_filter(p),
                      (MeasureRef("quantity", "count"),))]


_PLANS = {
    "ingredient_comparison": _comparison_plan,
    "yearly_trend": _trend_plan,
    "herb_cooccurrence": _cooccurrence_plan,
}


def builtin_report_defs() -> list[ReportDef]:
    return [
        ReportDef(
            "ingredient_comparison",
            {},
            (ParamSpec("formula", "text", doc="formula name, e.g. Ge Gen Tang"),
             ParamSpec("year", "integer", doc="calendar year"),
             ParamSpec("country", "text", doc="country compared against the overall average")),
            "Average quantity per herb: one country versus all countries.",
        ),
        ReportDef(
            "yearly_trend",
            {},
            (ParamSpec("formula", "text", doc="formula name"),),
            "Total and row count of quantity per year for one formula.",
        ),
        ReportDef(
            "herb_cooccurrence",
            {},
            (ParamSpec("formula", "text", required=False, doc="restrict to one formula"),
             ParamSpec("year", "integer", required=False, doc="restrict to one year"),
             ParamSpec("top", "integer", required=False, default=0, doc="keep the first N pairs (0 = all)")),
            "Distinct prescriptions containing both herbs of each pair.",
        ),
    ]


def report_def(name: str, params: dict | None = None) -> ReportDef:
    for d in builtin_report_defs():
        if d.name == name:
            return d.with_params(params or {})
    raise UnknownReport(f"unknown report {name!r}; choose from {', '.join(_PLANS)}")


# -- computation --------------------------------------------------------------

@dataclass(frozen=True)
class _Table:
    title: str
    x_axis: str
    header: tuple[str, ...]
    rows: list[tuple]  # rendered strings
    series: list[tuple[str, int]]  # (series name, column index holding y)


def _cells(cube: Cube, spec: QuerySpec) -> dict:
    rs = cube.query(spec)
    return {row[0]: row[1:] for row in rs.rows}


def _comparison(cube: Cube, p) -> _Table:
    country_spec, overall_spec = _comparison_plan(p)
    local = _cells(cube, country_spec)
    overall = _cells(cube, overall_spec)
    rows = []
    for herb in sorted(set(local) | set(overall), key=value_sort_key):
        ls, lc = local.get(herb, (0, 0))
        os_, oc = overall.get(herb, (0, 0))
        l_avg = render_avg(ls, lc) if lc else ""
        o_avg = render_avg(os_, oc) if oc else ""
        if lc and oc:
            a, b = Fraction(ls, lc), Fraction(os_, oc)
            diff = render_fraction(100 * (a - b) / b, 2)
        else:
            diff = ""
        rows.append((str(herb), l_avg, o_avg, diff))
    c = p["country"]
    return _Table(
        f"Average quantity per herb of {p['formula']} in {p['year']}: {c} against all countries",
        "herb",
        ("herb", f"{c} avg(quantity)", "overall avg(quantity)", "diff %"),
        rows,
        [(c, 1), ("Overall", 2)],
    )


def _trend(cube: Cube, p) -> _Table:
    rs = cube.query(_trend_plan(p)[0])
    rows = [tuple(str(v) for v in r) for r in rs.rows]
    return _Table(f"Yearly quantity of {p['formula']}", "year",
                  ("year", "sum(quantity)", "count(quantity)"), rows, [("sum(quantity)", 1)])


def cooccurrence_counts(wh: Warehouse, formula=None, year=None) -> list[tuple]:
    """``[(herb_a, herb_b, prescriptions)]`` sorted by count descending, then pair."""
    p = {"formula": formula, "year": year}
    predicate = list(_formula_filter(p) + _year_filter(p))
    herbs_by_rx: dict[str, set] = {}
    for row in wh.scan(predicate):
        rx = row.degenerate["prescription_id"]
        herbs_by_rx.setdefault(rx, set()).add(row.levels["Herb"]["herb"])
    counts: dict[tuple, int] = {}
    for herbs in herbs_by_rx.values():
        for a, b in combinations(sorted(herbs, key=value_sort_key), 2):
            counts[(a, b)] = counts.get((a, b), 0) + 1
    return sorted(((a, b, n) for (a, b), n in counts.items()),
                  key=lambda t: (-t[2], value_sort_key(t[0]), value_sort_key(t[1])))


def _cooccurrence(wh: Warehouse, p) -> _Table:
    pairs = cooccurrence_counts(wh, p.get("formula"), p.get("year"))
    if p.get("top"):
        pairs = pairs[: p["top"]]
    rows = [(str(a), str(b), str(n)) for a, b, n in pairs]
    scope = " ".join(str(v) for v in (p.get("formula"), p.get("year")) if v is not None)
    return _Table(f"Herb co-occurrence{' in ' + scope if scope else ''}", "pair",
                  ("herb_a", "herb_b", "prescriptions"), rows, [("prescriptions", 2)])


def _chartspec(t: _Table) -> str:
    def x_of(row):
        return f"{row[0]} + {row[1]}" if t.x_axis == "pair" else row[0]

    def y_of(text):
        return None if text == "" else json.loads(text)

    series = [{"name": name, "points": [{"x": x_of(r), "y": y_of(r[i])} for r in t.rows]}
              for name, i in t.series]
    doc = {"title": t.title, "x_axis": t.x_axis, "y_axis": t.header[t.series[0][1]], "series": series}
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def render_report(cube: Cube, wh: Warehouse, rdef: ReportDef, fmt: str = "table") -> RenderedReport:
    if rdef.name not in _PLANS:
        raise UnknownReport(f"unknown report {rdef.name!r}")
    if fmt not in FORMATS:
        raise InvalidQuery(f"format must be one of {', '.join(FORMATS)}")
    if wh.dirty or cube.source_digest != wh.checkpoint_digest:
        raise StaleCube("cube was built from a different warehouse checkpoint; rebuild it")
    p = rdef.resolved()
    if rdef.name == "ingredient_comparison":
        t = _comparison(cube, p)
    elif rdef.name == "yearly_trend":
        t = _trend(cube, p)
    else:
        t = _cooccurrence(wh, p)
    if fmt == "table":
        content = to_table(t.header, [list(r) for r in t.rows])
    elif fmt == "csv":
        content = to_csv(t.header, t.rows)
    else:
        content = _chartspec(t)
    return RenderedReport(fmt, content)
