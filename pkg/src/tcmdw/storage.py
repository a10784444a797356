"""On-disk warehouse: surrogate-keyed lookup tables plus an append-only fact table.

Layout under the warehouse root::

    manifest.json            counters + SHA-256 of every file below
    schema.json              the schema document the warehouse was created with
    dim_<table>.ndjson       one member per line, key order
    fact_<name>.ndjson       one fact per line, insertion order, append-only
    lineage.ndjson           load audit trail
    .lock                    present while a writer holds the warehouse

Mutations happen in memory; ``checkpoint`` flushes them and rewrites the
manifest. Readers only ever see checkpointed state.
"""

from __future__ import annotations

import datetime as _dt
import json
import os
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import (
    CorruptManifest,
    DigestMismatch,
    InvalidSchema,
    MissingAttribute,
    PathNotEmpty,
    ReadOnlyWarehouse,
    UnknownAttribute,
    UnknownLevel,
    UnknownTable,
    WarehouseLocked,
)
from .model import SchemaDef, dump_schema, parse_schema, validate_schema
from .values import INFERRED, UNKNOWN, canonical_json, coerce, sha256_file, sha256_hex

MANIFEST = "manifest.json"
SCHEMA_FILE = "schema.json"
LINEAGE_FILE = "lineage.ndjson"
LOCK_FILE = ".lock"
FORMAT = "tcmdw-warehouse/1"

CALENDAR_ATTRIBUTES = {"day", "month", "quarter", "year"}


@dataclass
class DimensionMember:
    surrogate_key: int
    natural_key: object
    attributes: dict
    parent_keys: dict = field(default_factory=dict)
    inferred: bool = False

    @property
    def parent_key(self):
        return next(iter(self.parent_keys.values()), None)

    def to_record(self) -> dict:
        rec = {"_key": self.surrogate_key, "_inferred": self.inferred}
        if self.parent_keys:
            rec["_parents"] = dict(self.parent_keys)
        rec.update(self.attributes)
        return rec


@dataclass(frozen=True)
class FactRow:
    keys: Mapping[str, int]  # dimension name -> surrogate key of its base table
    measures: Mapping[str, int]
    degenerate: Mapping[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class FactOutcome:
    index: int
    accepted: bool
    reason: str | None = None  # ForeignKeyViolation | DomainViolation | MissingValue
    message: str = ""


@dataclass
class AppendResult:
    outcomes: list[FactOutcome]

    @property
    def accepted(self) -> int:
        return sum(o.accepted for o in self.outcomes)

    @property
    def rejected(self) -> list[FactOutcome]:
        return [o for o in self.outcomes if not o.accepted]


@dataclass(frozen=True)
class Filter:
    """Membership test on a dimension level, shared by scans and queries."""

    dimension: str
    level: str
    values: tuple
    hierarchy: str | None = None


class JoinedFact:
    """A fact row with every hierarchy level of every dimension resolved."""

    __slots__ = ("index", "keys", "levels", "measures", "degenerate")

    def __init__(self, index, keys, levels, measures, degenerate):
        self.index = index
        self.keys = keys
        self.levels = levels  # dimension -> {level: value}
        self.measures = measures
        self.degenerate = degenerate

    def level(self, dimension: str, level: str):
        return self.levels[dimension][level]


def is_calendar_table(table) -> bool:
    return table.natural_key == "day" and set(table.attribute_names) <= CALENDAR_ATTRIBUTES


def calendar_attributes(day: int) -> dict:
    d = _dt.datetime.strptime(str(day), "%Y%m%d").date()
    return {
        "day": day,
        "month": d.year * 100 + d.month,
        "quarter": f"{d.year}Q{(d.month - 1) // 3 + 1}",
        "year": d.year,
    }


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


class Warehouse:
    def __init__(self, schema: SchemaDef, root: Path, writable: bool):
        self.schema = schema
        self.root = Path(root)
        self.writable = writable
        self.tables: dict[str, list[DimensionMember]] = {}
        self._index: dict[str, dict] = {}
        dims = schema.fact.dimension_refs
        self._fact_keys = {d: array("q") for d in dims}
        self._fact_measures = {m.name: array("q") for m in schema.fact.measures}
        self._fact_degenerate = {n: [] for n, _ in schema.fact.degenerate_keys}
        self._flushed_facts = 0
        self.lineage: list[dict] = []
        self._flushed_lineage = 0
        self.dirty = False
        self.checkpoint_digest: str | None = None
        self._level_cache: dict[tuple[str, int], dict] = {}
        self._has_lock = False
        self.inferred_created = 0

    # -- context / lock ---------------------------------------------------

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _acquire_lock(self):
        path = self.root / LOCK_FILE
        for _ in range(2):
            try:
                fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                try:
                    pid = int(path.read_text().strip() or 0)
                except (OSError, ValueError):
                    pid = 0
                if pid and _pid_alive(pid):
                    raise WarehouseLocked(f"{self.root} is locked by process {pid}") from None
                path.unlink(missing_ok=True)  # stale lock from a dead writer
                continue
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            self._has_lock = True
            return
        raise WarehouseLocked(f"could not acquire {path}")

    def close(self):
        if self._has_lock:
            (self.root / LOCK_FILE).unlink(missing_ok=True)
            self._has_lock = False

    def _require_writable(self):
        if not self.writable:
            raise ReadOnlyWarehouse(f"{self.root} is open read-only")

    # -- introspection ----------------------------------------------------

    @property
    def fact_count(self) -> int:
        first = next(iter(self._fact_measures.values()))
        return len(first)

    def member_count(self, table: str) -> int:
        return len(self.tables[table])

    def next_key(self, table: str) -> int:
        return len(self.tables[table])

    def lookup(self, table: str, natural_key):
        """Surrogate key for a natural key, or None."""
        tdef = self.schema.table(table)
        if tdef is None:
            raise UnknownTable(table)
        kind = tdef.attribute(tdef.natural_key).kind
        return self._index[table].get(coerce(kind, natural_key))

    def fact_columns(self):
        """Columnar view of the fact table (dimension keys, measures, degenerate keys)."""
        return self._fact_keys, self._fact_measures, self._fact_degenerate

    def fact_row(self, i: int) -> FactRow:
        return FactRow(
            {d: col[i] for d, col in self._fact_keys.items()},
            {m: col[i] for m, col in self._fact_measures.items()},
            {n: col[i] for n, col in self._fact_degenerate.items()},
        )

    def member_levels(self, dimension: str, key: int) -> dict:
        """All hierarchy level values of a base-table member."""
        cached = self._level_cache.get((dimension, key))
        if cached is not None:
            return cached
        dim = self.schema.dimension(dimension)
        base = self.tables[dim.base_table.name][key]
        out = {}
        for h in dim.hierarchies:
            for lv in h.levels:
                if lv.name in out:
                    continue
                tname, attr = dim.resolve_attribute(lv.attribute)
                member = base
                for nxt in dim.table_paths[tname][1:]:
                    member = self.tables[nxt][member.parent_keys.get(nxt, 0)]
                out[lv.name] = member.attributes[attr.name]
        self._level_cache[(dimension, key)] = out
        return out

    # -- dimension writes -------------------------------------------------

    def _new_member(self, table, natural_key, attributes, parent_keys, inferred):
        key = len(self.tables[table])
        m = DimensionMember(key, natural_key, attributes, parent_keys, inferred)
        self.tables[table].append(m)
        self._index[table][natural_key] = key
        self.inferred_created += inferred
        self.dirty = True
        return key

    def _resolve_parent(self, parent_table: str, natural_key) -> int:
        if natural_key is None or natural_key == UNKNOWN:
            return 0
        key = self.lookup(parent_table, natural_key)
        if key is None:
            key = self.infer_member(parent_table, natural_key)
        return key

    def infer_member(self, table: str, natural_key) -> int:
        """Create a placeholder member for a key seen before its dimension data."""
        self._require_writable()
        tdef = self.schema.table(table)
        if tdef is None:
            raise UnknownTable(table)
        kind = tdef.attribute(tdef.natural_key).kind
        natural_key = coerce(kind, natural_key)
        if natural_key == UNKNOWN:
            return 0
        existing = self._index[table].get(natural_key)
        if existing is not None:
            return existing
        if is_calendar_table(tdef):
            return self.ensure_date(table, natural_key)
        attrs = {a: INFERRED for a in tdef.attribute_names}
        attrs[tdef.natural_key] = natural_key
        return self._new_member(table, natural_key, attrs, {p: 0 for p in tdef.parents}, True)

    def ensure_date(self, table: str, day) -> int:
        """Key of a calendar member, creating it with derived attributes if absent."""
        tdef = self.schema.table(table)
        day = coerce("integer", day)
        key = self._index[table].get(day)
        if key is not None:
            return key
        self._require_writable()
        derived = calendar_attributes(day)
        attrs = {a: derived[a] for a in tdef.attribute_names}
        return self._new_member(table, day, attrs, {}, False)

    def upsert_member(self, table: str, natural_key, attributes: Mapping,
                      parent_natural_key=None) -> int:
        self._require_writable()
        tdef = self.schema.table(table)
        if tdef is None:
            raise UnknownTable(f"no lookup table named {table!r}")
        kind = tdef.attribute(tdef.natural_key).kind
        natural_key = coerce(kind, natural_key)
        if natural_key is None or natural_key == UNKNOWN:
            return 0
        extra = set(attributes) - set(tdef.attribute_names)
        if extra:
            raise UnknownAttribute(f"{table} has no attribute(s) {sorted(extra)}")
        attrs = {}
        for a in tdef.attributes:
            if a.name == tdef.natural_key:
                attrs[a.name] = natural_key
            elif a.name in attributes:
                attrs[a.name] = coerce(a.kind, attributes[a.name])
            else:
                raise MissingAttribute(f"{table}.{a.name} not supplied for {natural_key!r}")

        if parent_natural_key is None:
            parent_values = {}
        elif isinstance(parent_natural_key, Mapping):
            unknown = set(parent_natural_key) - set(tdef.parents)
            if unknown:
                raise UnknownTable(f"{table} has no parent table(s) {sorted(unknown)}")
            parent_values = dict(parent_natural_key)
        else:
            if len(tdef.parents) != 1:
                raise UnknownTable(f"{table} has {len(tdef.parents)} parent tables; pass a mapping")
            parent_values = {tdef.parents[0]: parent_natural_key}

        key = self._index[table].get(natural_key)
        if key is None:
            parents = {p: self._resolve_parent(p, parent_values.get(p)) for p in tdef.parents}
            return self._new_member(table, natural_key, attrs, parents, False)
        m = self.tables[table][key]
        m.attributes = attrs
        for p in tdef.parents:
            if p in parent_values:
                m.parent_keys[p] = self._resolve_parent(p, parent_values[p])
        m.inferred = False
        self._level_cache.clear()
        self.dirty = True
        return key

    # -- facts ------------------------------------------------------------

    def append_facts(self, rows: Iterable[FactRow]) -> AppendResult:
        self._require_writable()
        fact = self.schema.fact
        base_sizes = {d.name: len(self.tables[d.base_table.name]) for d in self.schema.fact_dimensions}
        mins = {m.name: m.min for m in fact.measures}
        outcomes = []
        for i, row in enumerate(rows):
            problem = None
            for dim, size in base_sizes.items():
                k = row.keys.get(dim)
                if not isinstance(k, int) or isinstance(k, bool) or not 0 <= k < size:
                    problem = ("ForeignKeyViolation", f"{dim} key {k!r} does not exist")
                    break
            if problem is None:
                for name, lo in mins.items():
                    v = row.measures.get(name)
                    if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                        problem = ("DomainViolation", f"{name}={v!r} below minimum {lo}")
                        break
            if problem is None:
                for name in self._fact_degenerate:
                    if row.degenerate.get(name) in (None, ""):
                        problem = ("MissingValue", f"degenerate key {name} is empty")
                        break
            if problem is not None:
                outcomes.append(FactOutcome(i, False, *problem))
                continue
            for dim, col in self._fact_keys.items():
                col.append(row.keys[dim])
            for name, col in self._fact_measures.items():
                col.append(row.measures[name])
            for name, col in self._fact_degenerate.items():
                col.append(str(row.degenerate[name]))
            outcomes.append(FactOutcome(i, True))
        if any(o.accepted for o in outcomes):
            self.dirty = True
        return AppendResult(outcomes)

    def scan(self, predicate: Iterable[Filter] | None = None) -> Iterator[JoinedFact]:
        filters = list(predicate or ())
        allowed: dict[str, set] = {}
        for f in filters:
            dim = self.schema.dimension(f.dimension)
            if dim is None or f.dimension not in self.schema.fact.dimension_refs:
                raise UnknownLevel(f"unknown dimension {f.dimension!r}")
            if f.level not in dim.level_names:
                raise UnknownLevel(f"dimension {f.dimension} has no level {f.level!r}")
            kind = dim.level_kind(f.level)
            values = {coerce(kind, v) for v in f.values}
            keys = {k for k in range(len(self.tables[dim.base_table.name]))
                    if self.member_levels(f.dimension, k)[f.level] in values}
            allowed[f.dimension] = allowed[f.dimension] & keys if f.dimension in allowed else keys

        dims = list(self._fact_keys)
        key_cols = [self._fact_keys[d] for d in dims]
        measure_names = list(self._fact_measures)
        measure_cols = [self._fact_measures[m] for m in measure_names]
        degen_names = list(self._fact_degenerate)
        degen_cols = [self._fact_degenerate[n] for n in degen_names]
        checks = [(j, allowed[d]) for j, d in enumerate(dims) if d in allowed]
        # per-dimension key -> level values, so the row loop is plain indexing
        resolved = []
        for d in dims:
            n = len(self.tables[self.schema.dimension(d).base_table.name])
            resolved.append([self.member_levels(d, k) for k in range(n)])
        rows = zip(*key_cols, *measure_cols, *degen_cols)
        nd, nm = len(dims), len(measure_names)
        for i, row in enumerate(rows):
            keys = row[:nd]
            if checks and any(keys[j] not in ok for j, ok in checks):
                continue
            yield JoinedFact(
                i,
                dict(zip(dims, keys)),
                {d: lv[k] for d, lv, k in zip(dims, resolved, keys)},
                dict(zip(measure_names, row[nd:nd + nm])),
                dict(zip(degen_names, row[nd + nm:])),
            )

    # -- persistence ------------------------------------------------------

    def _files(self) -> list[str]:
        files = [SCHEMA_FILE]
        files += [f"dim_{t.name}.ndjson" for t in self.schema.lookup_tables]
        files += [f"fact_{self.schema.fact.name}.ndjson", LINEAGE_FILE]
        return files

    def _fact_record(self, i: int) -> dict:
        rec = {d: col[i] for d, col in self._fact_keys.items()}
        rec.update({n: col[i] for n, col in self._fact_degenerate.items()})
        rec.update({m: col[i] for m, col in self._fact_measures.items()})
        return rec

    def checkpoint(self) -> str:
        """Flush every table, write the manifest, return its SHA-256."""
        self._require_writable()
        self.root.mkdir(parents=True, exist_ok=True)
        schema_path = self.root / SCHEMA_FILE
        if not schema_path.exists():
            schema_path.write_text(dump_schema(self.schema), encoding="utf-8")
        for t in self.schema.lookup_tables:
            path = self.root / f"dim_{t.name}.ndjson"
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
                for m in self.tables[t.name]:
                    fh.write(canonical_json(m.to_record()) + "\n")
            os.replace(tmp, path)
        with open(self.root / f"fact_{self.schema.fact.name}.ndjson", "a",
                  encoding="utf-8", newline="\n") as fh:
            for i in range(self._flushed_facts, self.fact_count):
                fh.write(canonical_json(self._fact_record(i)) + "\n")
        self._flushed_facts = self.fact_count
        with open(self.root / LINEAGE_FILE, "a", encoding="utf-8", newline="\n") as fh:
            for rec in self.lineage[self._flushed_lineage:]:
                fh.write(canonical_json(rec) + "\n")
        self._flushed_lineage = len(self.lineage)

        manifest = {
            "format": FORMAT,
            "schema_digest": self.schema.digest,
            "files": {name: sha256_file(self.root / name) for name in self._files()},
            "counters": {t.name: self.next_key(t.name) for t in self.schema.lookup_tables},
            "fact_count": self.fact_count,
            "lineage_count": len(self.lineage),
        }
        text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        tmp = self.root / (MANIFEST + ".tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, self.root / MANIFEST)
        self.checkpoint_digest = sha256_hex(text)
        self.dirty = False
        return self.checkpoint_digest


def _empty_tables(wh: Warehouse):
    for t in wh.schema.lookup_tables:
        wh.tables[t.name] = []
        wh._index[t.name] = {}


def init_warehouse(schema: SchemaDef, root_path) -> Warehouse:
    """Create a new warehouse directory; returns it open for writing."""
    report = validate_schema(schema)
    if not report.valid:
        raise InvalidSchema(report)
    root = Path(root_path)
    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        raise PathNotEmpty(f"{root} is not an empty directory")
    root.mkdir(parents=True, exist_ok=True)
    wh = Warehouse(schema, root, writable=True)
    wh._acquire_lock()
    _empty_tables(wh)
    for t in schema.lookup_tables:
        attrs = {a: UNKNOWN for a in t.attribute_names}
        wh.tables[t.name].append(DimensionMember(0, UNKNOWN, attrs, {p: 0 for p in t.parents}))
    wh.checkpoint()
    return wh


def _read_manifest(root: Path) -> tuple[dict, str]:
    path = root / MANIFEST
    try:
        text = path.read_text(encoding="utf-8")
        manifest = json.loads(text)
    except FileNotFoundError:
        raise CorruptManifest(f"{root} holds no {MANIFEST}") from None
    except (OSError, ValueError) as exc:
        raise CorruptManifest(f"unreadable manifest: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT or \
            not isinstance(manifest.get("files"), dict):
        raise CorruptManifest(f"{path} is not a warehouse manifest")
    return manifest, sha256_hex(text)


def manifest_digest(root_path) -> str:
    return _read_manifest(Path(root_path))[1]


def open_warehouse(root_path, writable: bool = False) -> Warehouse:
    """Open a checkpointed warehouse, verifying every file digest."""
    root = Path(root_path)
    manifest, digest = _read_manifest(root)
    for name, expected in sorted(manifest["files"].items()):
        path = root / name
        if not path.exists():
            raise DigestMismatch(f"{name} listed in manifest is missing")
        if sha256_file(path) != expected:
            raise DigestMismatch(f"{name} does not match its manifest digest")
    try:
        schema = parse_schema((root / SCHEMA_FILE).read_text(encoding="utf-8"))
    except Exception as exc:
        raise CorruptManifest(f"stored schema is unreadable: {exc}") from None
    if schema.digest != manifest.get("schema_digest"):
        raise DigestMismatch("stored schema does not match manifest schema digest")

    wh = Warehouse(schema, root, writable)
    _empty_tables(wh)
    try:
        for t in schema.lookup_tables:
            with open(root / f"dim_{t.name}.ndjson", encoding="utf-8") as fh:
                for line in fh:
                    rec = json.loads(line)
                    key = rec.pop("_key")
                    inferred = rec.pop("_inferred")
                    parents = rec.pop("_parents", {})
                    if key != len(wh.tables[t.name]):
                        raise CorruptManifest(f"{t.name}: surrogate keys are not dense")
                    nk = rec[t.natural_key]
                    wh.tables[t.name].append(DimensionMember(key, nk, rec, parents, inferred))
                    if key:
                        wh._index[t.name][nk] = key
        dims = list(wh._fact_keys)
        with open(root / f"fact_{schema.fact.name}.ndjson", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                for d in dims:
                    wh._fact_keys[d].append(rec[d])
                for m, col in wh._fact_measures.items():
                    col.append(rec[m])
                for n, col in wh._fact_degenerate.items():
                    col.append(rec[n])
        lineage_path = root / LINEAGE_FILE
        if lineage_path.exists():
            with open(lineage_path, encoding="utf-8") as fh:
                wh.lineage = [json.loads(line) for line in fh if line.strip()]
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptManifest(f"malformed table record: {exc}") from None

    counters = manifest.get("counters", {})
    for t in schema.lookup_tables:
        if counters.get(t.name) != wh.next_key(t.name):
            raise CorruptManifest(f"{t.name}: counter does not match stored rows")
    if manifest.get("fact_count") != wh.fact_count or manifest.get("lineage_count") != len(wh.lineage):
        raise CorruptManifest("fact or lineage count does not match stored rows")
    wh._flushed_facts = wh.fact_count
    wh._flushed_lineage = len(wh.lineage)
    wh.checkpoint_digest = digest
    if writable:
        wh._acquire_lock()
    return wh


# functional surface -------------------------------------------------------

def upsert_dimension_member(wh: Warehouse, table: str, natural_key, attributes: Mapping,
                            parent_natural_key=None) -> int:
    """Insert or type-1 update a lookup member; returns its surrogate key.

    ``parent_natural_key`` is a plain value for single-parent tables or a
    ``{parent_table: natural_key}`` mapping; unknown parents are inferred.
    """
    return wh.upsert_member(table, natural_key, attributes, parent_natural_key)


def append_facts(wh: Warehouse, rows: Iterable[FactRow]) -> AppendResult:
    return wh.append_facts(rows)


def scan_facts(wh: Warehouse, predicate: Iterable[Filter] | None = None) -> Iterator[JoinedFact]:
    return wh.scan(predicate)


def checkpoint(wh: Warehouse) -> str:
    return wh.checkpoint()


def observable_state(wh: Warehouse) -> dict:
    """Everything a reader can see, as plain data (for round-trip comparisons)."""
    return {
        "tables": {t: [m.to_record() for m in rows] for t, rows in wh.tables.items()},
        "counters": {t: wh.next_key(t) for t in wh.tables},
        "facts": [wh._fact_record(i) for i in range(wh.fact_count)],
        "lineage": list(wh.lineage),
    }
