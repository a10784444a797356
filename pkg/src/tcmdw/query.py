"""Query specs, result sets, the full-scan oracle and OLAP navigation.

``oracle_query`` answers a spec with one pass over the fact table and no cube
at all; it is the reference every cube answer is checked against.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace

from .errors import AmbiguousHierarchy, AtApex, AtBase, InvalidQuery, UnknownLevel, UnknownMeasure
from .model import SchemaDef
from .storage import Filter, Warehouse
from .values import ALL, coerce, render_avg, value_sort_key

AGGREGATORS = ("sum", "count", "min", "max", "avg")


@dataclass(frozen=True)
class GroupLevel:
    dimension: str
    level: str
    hierarchy: str | None = None


@dataclass(frozen=True)
class MeasureRef:
    measure: str
    agg: str = "sum"


@dataclass(frozen=True)
class QuerySpec:
    group_by: tuple[GroupLevel, ...] = ()
    filters: tuple[Filter, ...] = ()
    measures: tuple[MeasureRef, ...] = ()


def spec_from_dict(doc) -> QuerySpec:
    if not isinstance(doc, dict):
        raise InvalidQuery("query spec must be a JSON object")
    extra = set(doc) - {"group_by", "filters", "measures"}
    if extra:
        raise InvalidQuery(f"unknown query key(s) {sorted(extra)}")
    try:
        group = tuple(GroupLevel(g["dimension"], g["level"], g.get("hierarchy"))
                      for g in doc.get("group_by", []))
        filters = []
        for f in doc.get("filters", []):
            values = f["in"] if "in" in f else [f["value"]]
            if not isinstance(values, list):
                raise InvalidQuery("filter 'in' must be a list")
            filters.append(Filter(f["dimension"], f["level"], tuple(values), f.get("hierarchy")))
        measures = tuple(MeasureRef(m["measure"], m.get("agg", "sum")) for m in doc.get("measures", []))
    except (KeyError, TypeError) as exc:
        raise InvalidQuery(f"malformed query spec: missing {exc}") from None
    return QuerySpec(group, tuple(filters), measures)


def spec_to_dict(spec: QuerySpec) -> dict:
    def with_h(d, h):
        if h is not None:
            d["hierarchy"] = h
        return d

    return {
        "group_by": [with_h({"dimension": g.dimension, "level": g.level}, g.hierarchy) for g in spec.group_by],
        "filters": [with_h({"dimension": f.dimension, "level": f.level, "in": list(f.values)}, f.hierarchy)
                    for f in spec.filters],
        "measures": [{"measure": m.measure, "agg": m.agg} for m in spec.measures],
    }


@dataclass(frozen=True)
class ResolvedQuery:
    """A spec checked against a schema, with filter values coerced to column kinds."""

    group: tuple[tuple[str, str], ...]  # (dimension, level), All entries dropped
    filters: tuple[tuple[str, str, frozenset], ...]
    measures: tuple[MeasureRef, ...]

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(f"{d}.{lv}" for d, lv in self.group) + \
            tuple(f"{m.agg}({m.measure})" for m in self.measures)

    @property
    def measure_names(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(m.measure for m in self.measures))


def _check_level(schema: SchemaDef, dimension, level, hierarchy, allow_all=False):
    dim = schema.dimension(dimension)
    if dim is None or dimension not in schema.fact.dimension_refs:
        raise UnknownLevel(f"unknown dimension {dimension!r}")
    if hierarchy is not None:
        h = dim.hierarchy(hierarchy)
        if h is None:
            raise UnknownLevel(f"{dimension} has no hierarchy {hierarchy!r}")
        if level not in h.level_names and not (allow_all and level == ALL):
            raise UnknownLevel(f"hierarchy {dimension}.{hierarchy} has no level {level!r}")
    elif level not in dim.level_names and not (allow_all and level == ALL):
        raise UnknownLevel(f"{dimension} has no level {level!r}")
    return dim


def resolve_spec(schema: SchemaDef, spec: QuerySpec) -> ResolvedQuery:
    group, seen = [], set()
    for g in spec.group_by:
        _check_level(schema, g.dimension, g.level, g.hierarchy, allow_all=True)
        if g.dimension in seen:
            raise InvalidQuery(f"dimension {g.dimension} grouped more than once")
        seen.add(g.dimension)
        if g.level != ALL:
            group.append((g.dimension, g.level))
    filters = []
    for f in spec.filters:
        dim = _check_level(schema, f.dimension, f.level, f.hierarchy)
        kind = dim.level_kind(f.level)
        filters.append((f.dimension, f.level, frozenset(coerce(kind, v) for v in f.values)))
    if not spec.measures:
        raise InvalidQuery("query names no measure")
    for m in spec.measures:
        if schema.fact.measure(m.measure) is None:
            raise UnknownMeasure(f"unknown measure {m.measure!r}")
        if m.agg not in AGGREGATORS:
            raise UnknownMeasure(f"unknown aggregator {m.agg!r}; use one of {AGGREGATORS}")
    return ResolvedQuery(tuple(group), tuple(filters), spec.measures)


# -- results --------------------------------------------------------------

@dataclass(frozen=True)
class ResultSet:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def __len__(self):
        return len(self.rows)

    def string_rows(self) -> list[list[str]]:
        return [[str(v) for v in row] for row in self.rows]

    def to_csv(self) -> str:
        return to_csv(self.columns, self.string_rows())

    def to_table(self) -> str:
        return to_table(self.columns, self.string_rows())

    def to_json(self) -> str:
        return json.dumps({"columns": list(self.columns), "rows": [list(r) for r in self.rows]},
                          ensure_ascii=False) + "\n"

    def render(self, fmt: str = "table") -> str:
        return {"table": self.to_table, "csv": self.to_csv, "json": self.to_json}[fmt]()


def to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _numeric(text: str) -> bool:
    t = text.lstrip("-")
    return bool(t) and t.replace(".", "", 1).isdigit()


def to_table(header, rows) -> str:
    """Fixed-width text table: header, rule line, rows. Numeric columns right-aligned."""
    header = [str(h) for h in header]
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    right = [bool(rows) and all(_numeric(r[i]) or r[i] == "" for r in rows) for i in range(len(header))]

    def fmt(cells):
        out = [c.rjust(w) if r else c.ljust(w) for c, w, r in zip(cells, widths, right)]
        return "  ".join(out).rstrip()

    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def make_result(rq: ResolvedQuery, cells) -> ResultSet:
    """Turn ``(coords, {measure: (sum, count, min, max)})`` pairs into a sorted ResultSet."""
    rows = []
    for coords, aggs in cells:
        row = list(coords)
        for m in rq.measures:
            s, c, lo, hi = aggs[m.measure]
            row.append({"sum": s, "count": c, "min": lo, "max": hi}[m.agg] if m.agg != "avg"
                       else render_avg(s, c))
        rows.append(tuple(row))
    k = len(rq.group)
    rows.sort(key=lambda r: tuple(value_sort_key(v) for v in r[:k]))
    return ResultSet(rq.columns, tuple(rows))


def oracle_query(wh: Warehouse, spec: QuerySpec) -> ResultSet:
    """Answer ``spec`` with a single scan of the fact table."""
    rq = resolve_spec(wh.schema, spec)
    predicate = [Filter(d, lv, tuple(vals)) for d, lv, vals in rq.filters]
    names = rq.measure_names
    acc: dict[tuple, dict[str, list]] = {}
    for row in wh.scan(predicate):
        key = tuple(row.levels[d][lv] for d, lv in rq.group)
        cell = acc.get(key)
        if cell is None:
            acc[key] = {m: [row.measures[m], 1, row.measures[m], row.measures[m]] for m in names}
            continue
        for m in names:
            v = row.measures[m]
            a = cell[m]
            a[0] += v
            a[1] += 1
            if v < a[2]:
                a[2] = v
            if v > a[3]:
                a[3] = v
    return make_result(rq, acc.items())


# -- navigation -----------------------------------------------------------

def _entry(spec: QuerySpec, dimension: str):
    for i, g in enumerate(spec.group_by):
        if g.dimension == dimension:
            return i, g
    return None, None


def _pick_hierarchy(schema, dimension, level, hierarchy):
    dim = schema.dimension(dimension)
    if dim is None:
        raise UnknownLevel(f"unknown dimension {dimension!r}")
    if hierarchy is not None:
        h = dim.hierarchy(hierarchy)
        if h is None or (level is not None and level not in h.level_names):
            raise UnknownLevel(f"{dimension}: hierarchy {hierarchy!r} does not contain {level!r}")
        return h
    options = dim.hierarchies_with(level) if level is not None else list(dim.hierarchies)
    if not options:
        raise UnknownLevel(f"{dimension} has no level {level!r}")
    if len(options) > 1:
        raise AmbiguousHierarchy(f"{dimension} level {level} lies on hierarchies "
                                 f"{[h.name for h in options]}; name one")
    return options[0]


def _set_entry(spec, i, entry):
    group = list(spec.group_by)
    if i is None:
        group.append(entry)
    else:
        group[i] = entry
    return replace(spec, group_by=tuple(group))


def roll_up(schema: SchemaDef, spec: QuerySpec, dimension: str, hierarchy: str | None = None) -> QuerySpec:
    """Move ``dimension`` one level coarser; from the coarsest level it goes to All."""
    i, g = _entry(spec, dimension)
    if g is None or g.level == ALL:
        raise AtApex(f"{dimension} is already at All")
    h = _pick_hierarchy(schema, dimension, g.level, hierarchy or g.hierarchy)
    names = h.level_names
    pos = names.index(g.level)
    nxt = names[pos + 1] if pos + 1 < len(names) else ALL
    return _set_entry(spec, i, GroupLevel(dimension, nxt, h.name))


def drill_down(schema: SchemaDef, spec: QuerySpec, dimension: str, hierarchy: str | None = None) -> QuerySpec:
    """Move ``dimension`` one level finer; from All it enters at the coarsest level."""
    i, g = _entry(spec, dimension)
    if g is None or g.level == ALL:
        h = _pick_hierarchy(schema, dimension, None, hierarchy or (g.hierarchy if g else None))
        return _set_entry(spec, i, GroupLevel(dimension, h.level_names[-1], h.name))
    h = _pick_hierarchy(schema, dimension, g.level, hierarchy or g.hierarchy)
    pos = h.level_names.index(g.level)
    if pos == 0:
        raise AtBase(f"{dimension} is already at its finest level {g.level}")
    return _set_entry(spec, i, GroupLevel(dimension, h.level_names[pos - 1], h.name))


def slice_(schema: SchemaDef, spec: QuerySpec, dimension: str, level: str, member,
           hierarchy: str | None = None) -> QuerySpec:
    _check_level(schema, dimension, level, hierarchy)
    return replace(spec, filters=spec.filters + (Filter(dimension, level, (member,), hierarchy),))


def dice(schema: SchemaDef, spec: QuerySpec, filters) -> QuerySpec:
    new = []
    for f in filters:
        if not isinstance(f, Filter):
            dimension, level, values = f
            f = Filter(dimension, level, tuple(values))
        _check_level(schema, f.dimension, f.level, f.hierarchy)
        new.append(f)
    return replace(spec, filters=spec.filters + tuple(new))


def navigate(schema: SchemaDef, spec: QuerySpec, action: str, *args, **kwargs) -> QuerySpec:
    """Dispatch ``roll_up``/``drill_down``/``slice``/``dice``; returns a new spec."""
    ops = {"roll_up": roll_up, "drill_down": drill_down, "slice": slice_, "dice": dice}
    if action not in ops:
        raise InvalidQuery(f"unknown navigation action {action!r}")
    return ops[action](schema, spec, *args, **kwargs)


def normalize_spec(schema: SchemaDef, spec: QuerySpec) -> QuerySpec:
    """Fill in each group entry's hierarchy where its level implies exactly one."""
    group = []
    for g in spec.group_by:
        if g.hierarchy is None and g.level != ALL:
            dim = schema.dimension(g.dimension)
            hs = dim.hierarchies_with(g.level) if dim else []
            if len(hs) == 1:
                g = replace(g, hierarchy=hs[0].name)
        group.append(g)
    return replace(spec, group_by=tuple(group))
