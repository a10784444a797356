"""Data dictionary and load lineage."""

from __future__ import annotations

import datetime as _dt
import json
from dataclasses import asdict, dataclass

from .errors import DuplicateBatch, NotFound
from .storage import Warehouse
from .values import canonical_json, sha256_hex


@dataclass(frozen=True)
class ColumnEntry:
    name: str
    kind: str
    description: str


@dataclass(frozen=True)
class TableEntry:
    name: str
    kind: str  # "fact" | "lookup"
    columns: tuple[ColumnEntry, ...]
    row_count: int
    parents: tuple[str, ...]


@dataclass(frozen=True)
class DataDictionary:
    schema_name: str
    schema_digest: str
    tables: tuple[TableEntry, ...]

    def table(self, name: str) -> TableEntry:
        for t in self.tables:
            if t.name == name:
                return t
        raise NotFound(name)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LineageRecord:
    batch_id: str
    source_uri: str
    ruleset_digest: str
    started: str
    finished: str
    rows_in: int
    rows_out: int
    rows_rejected: int
    inferred_members: int
    rows_skipped: int = 0

    @property
    def consistent(self) -> bool:
        return self.rows_in == self.rows_out + self.rows_rejected + self.rows_skipped


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="microseconds").replace("+00:00", "Z")


def ruleset_digest(rules) -> str:
    """SHA-256 of the rule list as sorted-key JSON without whitespace."""
    return sha256_hex(canonical_json(list(rules)))


def data_dictionary(wh: Warehouse) -> DataDictionary:
    schema = wh.schema
    fact = schema.fact
    cols = [ColumnEntry(d.name, "integer", f"surrogate key into {d.base_table.name}")
            for d in schema.fact_dimensions]
    cols += [ColumnEntry(n, k, "degenerate key") for n, k in fact.degenerate_keys]
    cols += [ColumnEntry(m.name, "integer", f"additive measure in {m.unit}, minimum {m.min}")
             for m in fact.measures]
    tables = [TableEntry(fact.name, "fact", tuple(cols), wh.fact_count,
                         tuple(d.base_table.name for d in schema.fact_dimensions))]
    for t in schema.lookup_tables:
        tables.append(TableEntry(
            t.name, "lookup",
            tuple(ColumnEntry(a.name, a.kind, a.description) for a in t.attributes),
            wh.member_count(t.name),
            t.parents,
        ))
    return DataDictionary(schema.name, schema.digest, tuple(tables))


def record_lineage(wh: Warehouse, record: LineageRecord) -> None:
    if not record.consistent:
        raise ValueError(f"lineage counts for {record.batch_id} do not add up")
    if any(r["batch_id"] == record.batch_id for r in wh.lineage):
        raise DuplicateBatch(f"batch {record.batch_id!r} already loaded")
    wh._require_writable()
    wh.lineage.append(asdict(record))
    wh.dirty = True


def has_batch(wh: Warehouse, batch_id: str) -> bool:
    return any(r["batch_id"] == batch_id for r in wh.lineage)


def get_lineage(wh: Warehouse, batch_id: str) -> LineageRecord:
    for r in wh.lineage:
        if r["batch_id"] == batch_id:
            return LineageRecord(**r)
    raise NotFound(f"no lineage for batch {batch_id!r}")


def list_lineage(wh: Warehouse) -> list[LineageRecord]:
    return [LineageRecord(**r) for r in wh.lineage]


def lineage_totals(wh: Warehouse) -> dict:
    out = {"rows_in": 0, "rows_out": 0, "rows_rejected": 0, "inferred_members": 0}
    for r in wh.lineage:
        for k in out:
            out[k] += r[k]
    return out


def dictionary_json(dd: DataDictionary) -> str:
    return json.dumps(dd.to_dict(), indent=2, ensure_ascii=False) + "\n"
