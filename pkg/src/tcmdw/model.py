"""Dimensional schema definitions: parsing, validation and the built-in TCM model.

A schema is a fact table plus a list of dimensions. Each dimension is a small
tree of lookup tables: the base table is referenced by the fact rows, and each
table may point to one or more coarser "parent" tables (a snowflake). Levels
of a hierarchy name an attribute somewhere in that tree.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property

from .errors import DuplicateName, MissingSection, SchemaSyntaxError
from .values import ALL, canonical_json, sha256_hex

VALUE_KINDS = ("text", "integer", "decimal", "date")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str = "text"
    description: str = ""


@dataclass(frozen=True)
class LookupTableDef:
    name: str
    natural_key: str
    attributes: tuple[Attribute, ...]
    parents: tuple[str, ...] = ()

    @property
    def parent_table(self) -> str | None:
        return self.parents[0] if self.parents else None

    def attribute(self, name: str) -> Attribute | None:
        for a in self.attributes:
            if a.name == name:
                return a
        return None

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)


@dataclass(frozen=True)
class Level:
    name: str
    attribute: str


@dataclass(frozen=True)
class Hierarchy:
    name: str
    levels: tuple[Level, ...]  # finest -> coarsest; "All" is implied

    @property
    def level_names(self) -> tuple[str, ...]:
        return tuple(lv.name for lv in self.levels)


@dataclass(frozen=True)
class DimensionDef:
    name: str
    tables: tuple[LookupTableDef, ...]
    hierarchies: tuple[Hierarchy, ...] = ()

    def table(self, name: str) -> LookupTableDef | None:
        for t in self.tables:
            if t.name == name:
                return t
        return None

    @cached_property
    def base_table(self) -> LookupTableDef:
        named = {p for t in self.tables for p in t.parents}
        roots = [t for t in self.tables if t.name not in named]
        return roots[0] if roots else self.tables[0]

    @cached_property
    def level_names(self) -> tuple[str, ...]:
        """Distinct levels across all hierarchies, first-seen order."""
        seen: list[str] = []
        for h in self.hierarchies:
            for lv in h.levels:
                if lv.name not in seen:
                    seen.append(lv.name)
        return tuple(seen)

    def level(self, name: str) -> Level | None:
        for h in self.hierarchies:
            for lv in h.levels:
                if lv.name == name:
                    return lv
        return None

    def hierarchy(self, name: str) -> Hierarchy | None:
        for h in self.hierarchies:
            if h.name == name:
                return h
        return None

    def hierarchies_with(self, level: str) -> list[Hierarchy]:
        return [h for h in self.hierarchies if level in h.level_names]

    @property
    def finest_level(self) -> str | None:
        return self.hierarchies[0].levels[0].name if self.hierarchies else None

    @cached_property
    def table_paths(self) -> dict[str, tuple[str, ...]]:
        """Path of table names from the base table to every reachable table."""
        base = self.base_table
        paths = {base.name: (base.name,)}
        stack = [base.name]
        while stack:
            cur = self.table(stack.pop())
            for p in cur.parents:
                if p not in paths and self.table(p) is not None:
                    paths[p] = paths[cur.name] + (p,)
                    stack.append(p)
        return paths

    def resolve_attribute(self, ref: str) -> tuple[str, Attribute] | None:
        """Find ``attr`` or ``Table.attr`` among tables reachable from the base.

        Returns None when missing or ambiguous.
        """
        if "." in ref:
            tname, aname = ref.split(".", 1)
            if tname not in self.table_paths:
                return None
            attr = self.table(tname).attribute(aname)
            return (tname, attr) if attr else None
        hits = []
        for tname in self.table_paths:
            attr = self.table(tname).attribute(ref)
            if attr is not None:
                hits.append((tname, attr))
        return hits[0] if len(hits) == 1 else None

    def level_kind(self, level: str) -> str:
        lv = self.level(level)
        hit = self.resolve_attribute(lv.attribute) if lv else None
        return hit[1].kind if hit else "text"

    @cached_property
    def level_heights(self) -> dict[str, int]:
        """Longest chain length below each level; All sits above every level."""
        below: dict[str, set[str]] = {name: set() for name in self.level_names}
        for h in self.hierarchies:
            names = h.level_names
            for i, name in enumerate(names):
                below[name].update(names[:i])
        heights: dict[str, int] = {}

        def height(name, trail=()):
            if name in heights:
                return heights[name]
            if name in trail:
                return 0
            kids = below[name]
            heights[name] = 1 + max((height(k, trail + (name,)) for k in kids), default=-1)
            return heights[name]

        for name in self.level_names:
            height(name)
        heights[ALL] = 1 + max(heights.values(), default=-1)
        return heights

    def finer_or_equal(self, a: str, b: str) -> bool:
        """True when level ``a`` determines level ``b`` along some hierarchy."""
        if a == b or b == ALL:
            return True
        if a == ALL:
            return False
        # transitive closure over hierarchy chains
        frontier, seen = [a], {a}
        while frontier:
            cur = frontier.pop()
            for h in self.hierarchies:
                names = h.level_names
                if cur in names:
                    for nxt in names[names.index(cur) + 1:]:
                        if nxt == b:
                            return True
                        if nxt not in seen:
                            seen.add(nxt)
                            frontier.append(nxt)
        return False


@dataclass(frozen=True)
class MeasureDef:
    name: str
    unit: str = ""
    min: int = 1
    additivity: str = "additive"


@dataclass(frozen=True)
class FactDef:
    name: str
    dimension_refs: tuple[str, ...]
    degenerate_keys: tuple[tuple[str, str], ...] = ()
    measures: tuple[MeasureDef, ...] = ()

    def measure(self, name: str) -> MeasureDef | None:
        for m in self.measures:
            if m.name == name:
                return m
        return None


@dataclass(frozen=True)
class SchemaDef:
    name: str
    dimensions: tuple[DimensionDef, ...]
    fact: FactDef

    def dimension(self, name: str) -> DimensionDef | None:
        for d in self.dimensions:
            if d.name == name:
                return d
        return None

    @property
    def fact_dimensions(self) -> tuple[DimensionDef, ...]:
        return tuple(self.dimension(n) for n in self.fact.dimension_refs)

    @property
    def lookup_tables(self) -> tuple[LookupTableDef, ...]:
        return tuple(t for d in self.dimensions for t in d.tables)

    def table(self, name: str) -> LookupTableDef | None:
        for t in self.lookup_tables:
            if t.name == name:
                return t
        return None

    def dimension_of_table(self, name: str) -> DimensionDef | None:
        for d in self.dimensions:
            if d.table(name) is not None:
                return d
        return None

    @property
    def table_names(self) -> tuple[str, ...]:
        return (self.fact.name,) + tuple(t.name for t in self.lookup_tables)

    @cached_property
    def digest(self) -> str:
        return sha256_hex(canonical_json(schema_to_dict(self)))


# -- parsing --------------------------------------------------------------

def _check_keys(obj, path, required, optional=()):
    if not isinstance(obj, dict):
        raise SchemaSyntaxError("expected an object", path=path)
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise SchemaSyntaxError(f"unknown key {unknown[0]!r}", path=f"{path}.{unknown[0]}")
    for k in required:
        if k not in obj:
            raise SchemaSyntaxError(f"missing key {k!r}", path=path)


def _ident(value, path):
    if not isinstance(value, str) or not _IDENT.match(value):
        raise SchemaSyntaxError(f"expected an identifier, got {value!r}", path=path)
    return value


def _text(value, path):
    if not isinstance(value, str):
        raise SchemaSyntaxError(f"expected a string, got {value!r}", path=path)
    return value


def _list(value, path):
    if not isinstance(value, list):
        raise SchemaSyntaxError("expected a list", path=path)
    return value


def _kind(value, path):
    if value not in VALUE_KINDS:
        raise SchemaSyntaxError(f"value kind must be one of {VALUE_KINDS}, got {value!r}", path=path)
    return value


def _parse_table(obj, path):
    _check_keys(obj, path, ("name", "natural_key", "attributes"), ("parent",))
    attrs = []
    for i, a in enumerate(_list(obj["attributes"], f"{path}.attributes")):
        apath = f"{path}.attributes[{i}]"
        _check_keys(a, apath, ("name", "kind"), ("description",))
        attrs.append(Attribute(
            _ident(a["name"], f"{apath}.name"),
            _kind(a["kind"], f"{apath}.kind"),
            _text(a.get("description", ""), f"{apath}.description"),
        ))
    parent = obj.get("parent")
    if parent is None:
        parents = ()
    elif isinstance(parent, str):
        parents = (_ident(parent, f"{path}.parent"),)
    else:
        parents = tuple(_ident(p, f"{path}.parent[{i}]")
                        for i, p in enumerate(_list(parent, f"{path}.parent")))
    return LookupTableDef(
        _ident(obj["name"], f"{path}.name"),
        _ident(obj["natural_key"], f"{path}.natural_key"),
        tuple(attrs),
        parents,
    )


def _parse_hierarchy(obj, path):
    _check_keys(obj, path, ("name", "levels"))
    levels = []
    for i, lv in enumerate(_list(obj["levels"], f"{path}.levels")):
        lpath = f"{path}.levels[{i}]"
        _check_keys(lv, lpath, ("level", "attribute"))
        attr = _text(lv["attribute"], f"{lpath}.attribute")
        if not all(_IDENT.match(p) for p in attr.split(".")):
            raise SchemaSyntaxError(f"bad attribute reference {attr!r}", path=f"{lpath}.attribute")
        levels.append(Level(_ident(lv["level"], f"{lpath}.level"), attr))
    return Hierarchy(_ident(obj["name"], f"{path}.name"), tuple(levels))


def schema_from_dict(doc) -> SchemaDef:
    """Build a SchemaDef from an already-decoded JSON document."""
    if not isinstance(doc, dict):
        raise SchemaSyntaxError("schema document must be an object")
    unknown = sorted(set(doc) - {"name", "fact", "dimensions"})
    if unknown:
        raise SchemaSyntaxError(f"unknown key {unknown[0]!r}", path=f"$.{unknown[0]}")
    if "name" not in doc:
        raise SchemaSyntaxError("missing key 'name'")
    if "fact" not in doc:
        raise MissingSection("schema has no fact section", path="$.fact")
    if not doc.get("dimensions"):
        raise MissingSection("schema declares no dimensions", path="$.dimensions")

    dims = []
    for i, d in enumerate(_list(doc["dimensions"], "$.dimensions")):
        dpath = f"$.dimensions[{i}]"
        _check_keys(d, dpath, ("name", "tables"), ("hierarchies",))
        tables = tuple(_parse_table(t, f"{dpath}.tables[{j}]")
                       for j, t in enumerate(_list(d["tables"], f"{dpath}.tables")))
        if not tables:
            raise MissingSection("dimension declares no tables", path=f"{dpath}.tables")
        hiers = tuple(_parse_hierarchy(h, f"{dpath}.hierarchies[{j}]")
                      for j, h in enumerate(_list(d.get("hierarchies", []), f"{dpath}.hierarchies")))
        dims.append(DimensionDef(_ident(d["name"], f"{dpath}.name"), tables, hiers))

    f = doc["fact"]
    _check_keys(f, "$.fact", ("name", "dimensions", "measures"), ("degenerate_keys",))
    degen = []
    for i, k in enumerate(_list(f.get("degenerate_keys", []), "$.fact.degenerate_keys")):
        kpath = f"$.fact.degenerate_keys[{i}]"
        _check_keys(k, kpath, ("name", "kind"))
        degen.append((_ident(k["name"], f"{kpath}.name"), _kind(k["kind"], f"{kpath}.kind")))
    measures = []
    for i, m in enumerate(_list(f["measures"], "$.fact.measures")):
        mpath = f"$.fact.measures[{i}]"
        _check_keys(m, mpath, ("name", "unit", "min"))
        if not isinstance(m["min"], int) or isinstance(m["min"], bool):
            raise SchemaSyntaxError("measure min must be an integer", path=f"{mpath}.min")
        measures.append(MeasureDef(_ident(m["name"], f"{mpath}.name"),
                                   _text(m["unit"], f"{mpath}.unit"), m["min"]))
    refs = tuple(_ident(r, f"$.fact.dimensions[{i}]")
                 for i, r in enumerate(_list(f["dimensions"], "$.fact.dimensions")))
    fact = FactDef(_ident(f["name"], "$.fact.name"), refs, tuple(degen), tuple(measures))

    seen: dict[str, str] = {fact.name: "$.fact.name"}
    for i, d in enumerate(dims):
        for j, t in enumerate(d.tables):
            where = f"$.dimensions[{i}].tables[{j}].name"
            if t.name in seen:
                raise DuplicateName(f"table name {t.name!r} already used at {seen[t.name]}", path=where)
            seen[t.name] = where
    dim_names: set[str] = set()
    for i, d in enumerate(dims):
        if d.name in dim_names:
            raise DuplicateName(f"dimension name {d.name!r} declared twice",
                                path=f"$.dimensions[{i}].name")
        dim_names.add(d.name)

    return SchemaDef(_ident(doc["name"], "$.name"), tuple(dims), fact)


def parse_schema(text: str) -> SchemaDef:
    """Parse a UTF-8 JSON schema document (strict: unknown keys are rejected)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaSyntaxError(exc.msg, line=exc.lineno, column=exc.colno) from None
    try:
        return schema_from_dict(doc)
    except SchemaSyntaxError as exc:
        if exc.line is None:
            exc.line, exc.column = _locate(text, exc.path)
        raise


def _locate(text, path):
    """Rough line/column of the last key named in ``path`` (best effort)."""
    m = re.search(r"\.([A-Za-z_][A-Za-z0-9_]*)(?:\[\d+\])*$", path)
    if not m:
        return None, None
    idx = text.find(f'"{m.group(1)}"')
    if idx < 0:
        return None, None
    line = text.count("\n", 0, idx) + 1
    return line, idx - (text.rfind("\n", 0, idx) + 1) + 1


def schema_to_dict(schema: SchemaDef) -> dict:
    dims = []
    for d in schema.dimensions:
        tables = []
        for t in d.tables:
            tdoc = {
                "name": t.name,
                "natural_key": t.natural_key,
                "attributes": [{"name": a.name, "kind": a.kind, "description": a.description}
                               for a in t.attributes],
            }
            if len(t.parents) == 1:
                tdoc["parent"] = t.parents[0]
            elif t.parents:
                tdoc["parent"] = list(t.parents)
            tables.append(tdoc)
        dims.append({
            "name": d.name,
            "tables": tables,
            "hierarchies": [{"name": h.name,
                             "levels": [{"level": lv.name, "attribute": lv.attribute} for lv in h.levels]}
                            for h in d.hierarchies],
        })
    return {
        "name": schema.name,
        "fact": {
            "name": schema.fact.name,
            "dimensions": list(schema.fact.dimension_refs),
            "degenerate_keys": [{"name": n, "kind": k} for n, k in schema.fact.degenerate_keys],
            "measures": [{"name": m.name, "unit": m.unit, "min": m.min} for m in schema.fact.measures],
        },
        "dimensions": dims,
    }


def dump_schema(schema: SchemaDef) -> str:
    return json.dumps(schema_to_dict(schema), indent=2, ensure_ascii=False) + "\n"


# -- validation -----------------------------------------------------------

@dataclass(frozen=True)
class Issue:
    severity: str  # "error" | "warning"
    code: str
    message: str
    location: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = field(default_factory=tuple)

    @property
    def valid(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "warning"]


def _find_cycles(graph: dict[str, tuple[str, ...]]) -> list[list[str]]:
    """Elementary cycles reachable by DFS, each reported once (by node set)."""
    cycles, seen_sets = [], set()
    state: dict[str, int] = {}

    def visit(node, stack):
        state[node] = 1
        stack.append(node)
        for nxt in graph.get(node, ()):
            if nxt not in graph:
                continue
            if state.get(nxt) == 1:
                cyc = stack[stack.index(nxt):]
                key = frozenset(cyc)
                if key not in seen_sets:
                    seen_sets.add(key)
                    cycles.append(list(cyc))
            elif state.get(nxt) is None:
                visit(nxt, stack)
        stack.pop()
        state[node] = 2

    for n in graph:
        if state.get(n) is None:
            visit(n, [])
    return cycles


def validate_schema(schema: SchemaDef) -> ValidationReport:
    """Report every structural problem; never raises."""
    issues: list[Issue] = []

    def err(code, msg, loc):
        issues.append(Issue("error", code, msg, loc))

    def warn(code, msg, loc):
        issues.append(Issue("warning", code, msg, loc))

    declared = {d.name for d in schema.dimensions}
    for i, ref in enumerate(schema.fact.dimension_refs):
        if ref not in declared:
            err("UnresolvedDimension", f"fact references undeclared dimension {ref!r}",
                f"$.fact.dimensions[{i}]")
    if len(set(schema.fact.dimension_refs)) != len(schema.fact.dimension_refs):
        err("DuplicateDimensionRef", "fact references a dimension twice", "$.fact.dimensions")
    if not schema.fact.dimension_refs:
        err("NoDimensionRef", "fact references no dimension", "$.fact.dimensions")
    if not schema.fact.measures:
        err("NoMeasure", "fact declares no measure", "$.fact.measures")
    columns: dict[str, str] = {r: f"$.fact.dimensions[{i}]" for i, r in enumerate(schema.fact.dimension_refs)}
    for i, (name, _) in enumerate(schema.fact.degenerate_keys):
        loc = f"$.fact.degenerate_keys[{i}].name"
        if name in columns:
            err("DuplicateFactColumn", f"fact column {name!r} declared twice", loc)
        columns[name] = loc
    for i, m in enumerate(schema.fact.measures):
        loc = f"$.fact.measures[{i}].name"
        if m.name in columns:
            err("DuplicateFactColumn", f"fact column {m.name!r} declared twice", loc)
        columns[m.name] = loc

    for di, d in enumerate(schema.dimensions):
        dpath = f"$.dimensions[{di}]"
        if d.name not in schema.fact.dimension_refs:
            warn("UnreferencedDimension", f"dimension {d.name!r} is not used by the fact", f"{dpath}.name")
        names = [t.name for t in d.tables]
        referrers: dict[str, list[str]] = {}
        for ti, t in enumerate(d.tables):
            tpath = f"{dpath}.tables[{ti}]"
            if t.natural_key not in t.attribute_names:
                err("NaturalKeyMissing", f"natural key {t.natural_key!r} is not an attribute of {t.name}",
                    f"{tpath}.natural_key")
            anames = t.attribute_names
            for ai, a in enumerate(anames):
                if a in anames[:ai]:
                    err("DuplicateAttribute", f"attribute {a!r} declared twice in {t.name}",
                        f"{tpath}.attributes[{ai}].name")
            for pi, p in enumerate(t.parents):
                ppath = f"{tpath}.parent" if len(t.parents) == 1 else f"{tpath}.parent[{pi}]"
                if p not in names:
                    err("UnknownParent", f"parent {p!r} is not a table of dimension {d.name}", ppath)
                elif p == t.name:
                    err("ParentCycle", f"table {t.name} names itself as parent", ppath)
                else:
                    referrers.setdefault(p, []).append(t.name)

        graph = {t.name: tuple(p for p in t.parents if p != t.name) for t in d.tables}
        cycles = [c for c in _find_cycles(graph) if len(c) > 1]
        for cyc in cycles:
            ti = names.index(cyc[0])
            loc = f"{dpath}.tables[{ti}].parent" if len(d.tables[ti].parents) == 1 \
                else f"{dpath}.tables[{ti}].parent[0]"
            err("ParentCycle", "parent links form a cycle: " + " -> ".join(cyc + [cyc[0]]), loc)
        if not cycles:
            roots = [t for t in d.tables if t.name not in referrers]
            if len(roots) != 1:
                err("RootCount", f"dimension {d.name} must have exactly one base table, found "
                    f"{[r.name for r in roots]}", f"{dpath}.tables")
            for p, refs in referrers.items():
                if len(refs) > 1:
                    err("NotATree", f"table {p} is parent of several tables {refs}",
                        f"{dpath}.tables[{names.index(p)}].name")

        if not d.hierarchies:
            warn("NoHierarchy", f"dimension {d.name} has no hierarchy; it only rolls up to All",
                 f"{dpath}.name")
        level_attr: dict[str, str] = {}
        hnames: list[str] = []
        finest: set[str] = set()
        for hi, h in enumerate(d.hierarchies):
            hpath = f"{dpath}.hierarchies[{hi}]"
            if h.name in hnames:
                err("DuplicateHierarchy", f"hierarchy {h.name!r} declared twice", f"{hpath}.name")
            hnames.append(h.name)
            if not h.levels:
                err("EmptyHierarchy", f"hierarchy {h.name} has no levels", f"{hpath}.levels")
                continue
            finest.add(h.levels[0].name)
            for li, lv in enumerate(h.levels):
                lpath = f"{hpath}.levels[{li}]"
                if lv.name == ALL:
                    err("ExplicitAll", "'All' is implicit and may not be listed", f"{lpath}.level")
                if lv.name in h.level_names[:li]:
                    err("DuplicateLevel", f"level {lv.name!r} repeated in {h.name}", f"{lpath}.level")
                if d.resolve_attribute(lv.attribute) is None:
                    err("UnknownLevelAttribute",
                        f"level {lv.name} attribute {lv.attribute!r} is missing or ambiguous "
                        "among tables reachable from the base table", f"{lpath}.attribute")
                prev = level_attr.setdefault(lv.name, lv.attribute)
                if prev != lv.attribute:
                    err("LevelConflict", f"level {lv.name} maps to {prev!r} and {lv.attribute!r}",
                        f"{lpath}.attribute")
            first = h.levels[0]
            hit = d.resolve_attribute(first.attribute)
            base = d.base_table
            if hit is not None and not cycles and (hit[0] != base.name or hit[1].name != base.natural_key):
                err("FinestLevelNotKey",
                    f"finest level {first.name} must use the natural key of base table {base.name}",
                    f"{hpath}.levels[0].attribute")
        if len(finest) > 1:
            err("BaseLevelMismatch", f"hierarchies of {d.name} start at different levels {sorted(finest)}",
                f"{dpath}.hierarchies")
        order: dict[str, tuple[str, ...]] = {}
        for h in d.hierarchies:
            for i, name in enumerate(h.level_names):
                order[name] = tuple(set(order.get(name, ())) | set(h.level_names[i + 1:i + 2]))
        if [c for c in _find_cycles(order) if len(c) > 1]:
            err("HierarchyOrderConflict", f"hierarchies of {d.name} order levels inconsistently",
                f"{dpath}.hierarchies")

    return ValidationReport(tuple(issues))


# -- lattice --------------------------------------------------------------

def dimension_choices(dim: DimensionDef) -> tuple[str, ...]:
    return dim.level_names + (ALL,)


def enumerate_lattice(schema: SchemaDef) -> list[tuple[str, ...]]:
    """Every cuboid: one level (or All) per fact dimension, in fact-dimension order."""
    out: list[tuple[str, ...]] = [()]
    for dim in schema.fact_dimensions:
        out = [c + (choice,) for c in out for choice in dimension_choices(dim)]
    return out


# -- built-in TCM schema --------------------------------------------------

def _t(name, key, attrs, parent=None):
    doc = {"name": name, "natural_key": key,
           "attributes": [{"name": a, "kind": k, "description": desc} for a, k, desc in attrs]}
    if parent is not None:
        doc["parent"] = parent
    return doc


def _h(name, *levels):
    return {"name": name, "levels": [{"level": lv, "attribute": lv} for lv in levels]}


TCM_SCHEMA_DOC = {
    "name": "TCMDW",
    "fact": {
        "name": "FormulaList",
        "dimensions": ["Date", "Formula", "Herb", "Source"],
        "degenerate_keys": [{"name": "prescription_id", "kind": "text"}],
        "measures": [{"name": "quantity", "unit": "milligrams", "min": 1}],
    },
    "dimensions": [
        {
            "name": "Date",
            "tables": [_t("Dates", "day", [
                ("day", "integer", "calendar day as yyyymmdd"),
                ("month", "integer", "calendar month as yyyymm"),
                ("quarter", "text", "calendar quarter as yyyyQq"),
                ("year", "integer", "calendar year"),
            ])],
            "hierarchies": [_h("calendar", "day", "month", "quarter", "year")],
        },
        {
            "name": "Formula",
            "tables": [
                _t("Formulas", "formula", [
                    ("formula", "text", "formula name (pinyin)"),
                    ("english_name", "text", "English name of the formula"),
                ], parent="FormulaTypes"),
                _t("FormulaTypes", "formula_type", [
                    ("formula_type", "text", "therapeutic class of the formula"),
                ]),
            ],
            "hierarchies": [_h("by_type", "formula", "formula_type")],
        },
        {
            "name": "Herb",
            "tables": [
                _t("Herbs", "herb", [
                    ("herb", "text", "herb name (pinyin)"),
                    ("latin_name", "text", "pharmaceutical name"),
                ], parent="HerbTypes"),
                _t("HerbTypes", "herb_type", [
                    ("herb_type", "text", "functional category of the herb"),
                ]),
            ],
            "hierarchies": [_h("by_type", "herb", "herb_type")],
        },
        {
            "name": "Source",
            "tables": [
                _t("Sources", "source", [
                    ("source", "text", "prescribing source"),
                ], parent=["SourceTypes", "Countries"]),
                _t("SourceTypes", "source_type", [
                    ("source_type", "text", "kind of prescribing source"),
                ]),
                _t("Countries", "country", [
                    ("country", "text", "prescribing country"),
                    ("iso_code", "text", "ISO 3166-1 alpha-2 code"),
                ]),
            ],
            "hierarchies": [_h("by_type", "source", "source_type"),
                            _h("by_geography", "source", "country")],
        },
    ],
}


def builtin_tcm_schema() -> SchemaDef:
    return parse_schema(json.dumps(TCM_SCHEMA_DOC))
