"""Extract, transform and load source files into a warehouse.

Row-level problems never abort a batch: every staged row ends up either as
a conformed row or as a reject record carrying the failing rule and reason.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

from .errors import (
    ConfigInvalid,
    HeaderMismatch,
    MissingAttribute,
    RuleError,
    SourceUnreadable,
    TcmdwError,
    UnknownAttribute,
    UnknownTable,
)
from .metadata import LineageRecord, has_batch, record_lineage, ruleset_digest, utc_now
from .storage import FactRow, Warehouse, is_calendar_table, open_warehouse
from .values import UNKNOWN, round_half_up

log = logging.getLogger(__name__)

REJECT_SAMPLE = 100
ON_MISS = ("reject", "unknown", "passthrough")


# -- rules ----------------------------------------------------------------

class _Reject(Exception):
    def __init__(self, reason, detail=""):
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


def _missing(v) -> bool:
    return v is None or (isinstance(v, str) and v.strip() == "")


def _number(field_name, v) -> Decimal:
    if _missing(v):
        raise _Reject("MissingValue", f"{field_name} is empty")
    try:
        d = Decimal(str(v).strip())
    except InvalidOperation:
        raise _Reject("BadNumber", f"{field_name}={v!r} is not a number") from None
    if not d.is_finite():
        raise _Reject("BadNumber", f"{field_name}={v!r} is not finite")
    return d


@dataclass(frozen=True)
class Rename:
    source: str
    target: str
    op = "rename"

    @property
    def inputs(self):
        return (self.source,)

    def apply(self, row):
        row[self.target] = row.pop(self.source)

    def to_dict(self):
        return {"op": "rename", "from": self.source, "to": self.target}


@dataclass(frozen=True)
class Constant:
    field: str
    value: object
    op = "constant"
    inputs = ()

    def apply(self, row):
        row[self.field] = self.value

    def to_dict(self):
        return {"op": "constant", "field": self.field, "value": self.value}


@dataclass(frozen=True)
class Lookup:
    field: str
    mapping: dict
    on_miss: str = "reject"
    op = "lookup"

    @property
    def inputs(self):
        return (self.field,)

    def apply(self, row):
        v = row[self.field]
        key = v.strip() if isinstance(v, str) else v
        if key in self.mapping:
            row[self.field] = self.mapping[key]
        elif self.on_miss == "reject":
            raise _Reject("UnmappedValue", f"{self.field}={v!r} has no lookup entry")
        elif self.on_miss == "unknown":
            row[self.field] = UNKNOWN

    def to_dict(self):
        return {"op": "lookup", "field": self.field, "mapping": dict(self.mapping), "on_miss": self.on_miss}


@dataclass(frozen=True)
class Scale:
    field: str
    factor: Decimal
    op = "scale"

    @property
    def inputs(self):
        return (self.field,)

    def apply(self, row):
        row[self.field] = round_half_up(_number(self.field, row[self.field]) * self.factor)

    def to_dict(self):
        return {"op": "scale", "field": self.field, "factor": str(self.factor)}


_DATE_TOKENS = (("YYYY", "%Y"), ("YY", "%y"), ("MM", "%m"), ("DD", "%d"))


def _strptime_pattern(pattern: str) -> str:
    out, i = [], 0
    while i < len(pattern):
        for token, directive in _DATE_TOKENS:
            if pattern.startswith(token, i):
                out.append(directive)
                i += len(token)
                break
        else:
            out.append("%%" if pattern[i] == "%" else pattern[i])
            i += 1
    return "".join(out)


@dataclass(frozen=True)
class DateParse:
    field: str
    pattern: str
    op = "date_parse"

    @property
    def inputs(self):
        return (self.field,)

    def apply(self, row):
        v = row[self.field]
        if _missing(v):
            raise _Reject("MissingValue", f"{self.field} is empty")
        try:
            d = _dt.datetime.strptime(str(v).strip(), _strptime_pattern(self.pattern)).date()
        except ValueError:
            raise _Reject("BadDate", f"{self.field}={v!r} does not match {self.pattern}") from None
        row[self.field] = d.year * 10000 + d.month * 100 + d.day

    def to_dict(self):
        return {"op": "date_parse", "field": self.field, "pattern": self.pattern}


@dataclass(frozen=True)
class DomainCheck:
    field: str
    min: Decimal | None = None
    max: Decimal | None = None
    op = "domain_check"

    @property
    def inputs(self):
        return (self.field,)

    def apply(self, row):
        d = _number(self.field, row[self.field])
        if (self.min is not None and d < self.min) or (self.max is not None and d > self.max):
            raise _Reject("OutOfRange", f"{self.field}={row[self.field]!r} outside [{self.min}, {self.max}]")

    def to_dict(self):
        return {"op": "domain_check", "field": self.field,
                "min": None if self.min is None else str(self.min),
                "max": None if self.max is None else str(self.max)}


def _decimal(v, what):
    try:
        return Decimal(str(v))
    except InvalidOperation:
        raise ConfigInvalid(f"{what} must be a number, got {v!r}") from None


def parse_rule(obj) -> object:
    if not isinstance(obj, dict) or "op" not in obj:
        raise ConfigInvalid(f"rule must be an object with 'op': {obj!r}")
    op = obj["op"]
    shapes = {
        "rename": ({"from", "to"}, set()),
        "constant": ({"field", "value"}, set()),
        "lookup": ({"field", "mapping"}, {"on_miss"}),
        "scale": ({"field", "factor"}, set()),
        "date_parse": ({"field", "pattern"}, set()),
        "domain_check": ({"field"}, {"min", "max"}),
    }
    if op not in shapes:
        raise ConfigInvalid(f"unknown rule op {op!r}")
    required, optional = shapes[op]
    keys = set(obj) - {"op"}
    if not required <= keys or keys - required - optional:
        raise ConfigInvalid(f"rule {op} takes {sorted(required)} (+{sorted(optional)}), got {sorted(keys)}")
    if op == "rename":
        return Rename(obj["from"], obj["to"])
    if op == "constant":
        return Constant(obj["field"], obj["value"])
    if op == "lookup":
        if not isinstance(obj["mapping"], dict):
            raise ConfigInvalid("lookup mapping must be an object")
        on_miss = obj.get("on_miss", "reject")
        if on_miss not in ON_MISS:
            raise ConfigInvalid(f"on_miss must be one of {ON_MISS}")
        return Lookup(obj["field"], dict(obj["mapping"]), on_miss)
    if op == "scale":
        return Scale(obj["field"], _decimal(obj["factor"], "scale factor"))
    if op == "date_parse":
        return DateParse(obj["field"], obj["pattern"])
    lo, hi = obj.get("min"), obj.get("max")
    return DomainCheck(obj["field"], None if lo is None else _decimal(lo, "min"),
                       None if hi is None else _decimal(hi, "max"))


def parse_rules(objs) -> tuple:
    if not isinstance(objs, list):
        raise ConfigInvalid("rules must be a list")
    return tuple(parse_rule(o) for o in objs)


def check_rules(fields: Sequence[str], rules: Sequence) -> tuple[str, ...]:
    """Statically check that every rule's input exists when it runs.

    Returns the field set after the last rule. Order is significant: a rule
    that reads a field renamed by an earlier rule must use the new name.
    """
    available = list(fields)
    for i, rule in enumerate(rules):
        for name in rule.inputs:
            if name not in available:
                raise RuleError(f"rule {i} ({rule.op}) reads {name!r}, which does not exist at that point")
        if isinstance(rule, Rename):
            available.remove(rule.source)
            if rule.target not in available:
                available.append(rule.target)
        elif isinstance(rule, Constant) and rule.field not in available:
            available.append(rule.field)
    return tuple(available)


# -- staging --------------------------------------------------------------

@dataclass(frozen=True)
class SourceConfig:
    uri: str
    format: str = "csv"
    field_map: dict = field(default_factory=dict)
    batch_id: str = ""
    kind: str = "fact"  # "fact" | "dimension"
    table: str | None = None
    rules: tuple = ()
    rules_json: tuple = ()
    infer_members: bool = False


@dataclass(frozen=True)
class RejectRecord:
    row: dict
    rule_index: int | None  # None: rejected before/after the rule chain
    reason: str
    detail: str = ""
    line: int = 0


@dataclass(frozen=True)
class ConformedRow:
    fields: dict
    line: int = 0


@dataclass
class StagedBatch:
    fields: tuple[str, ...]
    rows: list[tuple[int, dict]]  # (source line, staged row)
    rejects: list[RejectRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)


def extract(cfg: SourceConfig) -> StagedBatch:
    path = Path(cfg.uri)
    fmap = dict(cfg.field_map)
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise SourceUnreadable(f"cannot read {path}: {exc.strerror or exc}") from None
    with fh:
        if cfg.format == "csv":
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise HeaderMismatch(f"{path} has no header row") from None
            except (csv.Error, UnicodeDecodeError) as exc:
                raise SourceUnreadable(f"{path}: {exc}") from None
            missing = [c for c in fmap if c not in header]
            if missing:
                raise HeaderMismatch(f"{path} header lacks column(s) {missing}")
            cols = [(i, fmap[c]) for i, c in enumerate(header) if c in fmap] if fmap \
                else list(enumerate(header))
            batch = StagedBatch(tuple(name for _, name in cols), [])
            try:
                for row in reader:
                    line = reader.line_num
                    if not row:
                        continue
                    if len(row) != len(header):
                        batch.rejects.append(RejectRecord(
                            dict(zip(header, row)), None, "MalformedRecord",
                            f"expected {len(header)} fields, got {len(row)}", line))
                        continue
                    batch.rows.append((line, {name: row[i] for i, name in cols}))
            except (csv.Error, UnicodeDecodeError) as exc:
                raise SourceUnreadable(f"{path}: {exc}") from None
            return batch
        if cfg.format == "jsonl":
            records, rejects, keys = [], [], []
            try:
                for n, text in enumerate(fh, start=1):
                    if not text.strip():
                        continue
                    try:
                        obj = json.loads(text)
                    except ValueError as exc:
                        rejects.append(RejectRecord({"_raw": text.rstrip("\n")}, None,
                                                    "MalformedRecord", str(exc), n))
                        continue
                    if not isinstance(obj, dict):
                        rejects.append(RejectRecord({"_raw": text.rstrip("\n")}, None,
                                                    "MalformedRecord", "line is not a JSON object", n))
                        continue
                    records.append((n, obj))
                    keys.extend(k for k in obj if k not in keys)
            except UnicodeDecodeError as exc:
                raise SourceUnreadable(f"{path}: {exc}") from None
            if fmap:
                rows = [(n, {dst: obj.get(src) for src, dst in fmap.items()}) for n, obj in records]
                fields = tuple(fmap.values())
            else:
                rows = [(n, {k: obj.get(k) for k in keys}) for n, obj in records]
                fields = tuple(keys)
            return StagedBatch(fields, rows, rejects)
    raise ConfigInvalid(f"unsupported source format {cfg.format!r}")


def transform(batch: StagedBatch, rules: Sequence) -> tuple[list[ConformedRow], list[RejectRecord]]:
    """Apply ``rules`` in order to every staged row.

    Extract-time rejects carried by the batch are not included; callers add
    them when reporting.
    """
    check_rules(batch.fields, rules)
    conformed, rejects = [], []
    for line, original in batch.rows:
        row = dict(original)
        for i, rule in enumerate(rules):
            try:
                rule.apply(row)
            except _Reject as r:
                rejects.append(RejectRecord(original, i, r.reason, r.detail, line))
                break
        else:
            conformed.append(ConformedRow(row, line))
    return conformed, rejects


# -- load -----------------------------------------------------------------

@dataclass
class LoadReport:
    batch_id: str
    rows_in: int = 0
    inserted: int = 0
    skipped_duplicate_batch: int = 0
    rejected: int = 0
    inferred_members: int = 0
    rejects: list[RejectRecord] = field(default_factory=list)

    @property
    def balanced(self) -> bool:
        return self.rows_in == self.inserted + self.skipped_duplicate_batch + self.rejected

    def add_reject(self, rec: RejectRecord):
        self.rejected += 1
        if len(self.rejects) < REJECT_SAMPLE:
            self.rejects.append(rec)

    def summary(self) -> dict:
        return {"batch_id": self.batch_id, "rows_in": self.rows_in, "inserted": self.inserted,
                "skipped_duplicate_batch": self.skipped_duplicate_batch, "rejected": self.rejected,
                "inferred_members": self.inferred_members}


def _int_measure(name, v):
    if isinstance(v, int) and not isinstance(v, bool):
        return v
    d = _number(name, v)
    if d != d.to_integral_value():
        raise _Reject("BadNumber", f"{name}={v!r} is not an integer; scale it first")
    return int(d)


def _field(row, *names):
    for n in names:
        if n in row:
            return row[n]
    return None


def _load_facts(wh: Warehouse, rows, infer_members, report):
    schema = wh.schema
    dims = schema.fact_dimensions
    pending, pending_rows = [], []
    for crow in rows:
        r = crow.fields
        try:
            measures = {}
            for m in schema.fact.measures:
                v = _int_measure(m.name, r.get(m.name))
                if v < m.min:
                    raise _Reject("DomainViolation", f"{m.name}={v} below minimum {m.min}")
                measures[m.name] = v
            degenerate = {}
            for name, _ in schema.fact.degenerate_keys:
                if _missing(r.get(name)):
                    raise _Reject("MissingValue", f"{name} is empty")
                degenerate[name] = r[name]
            keys = {}
            for d in dims:
                base = d.base_table
                value = _field(r, d.name, base.natural_key)
                if _missing(value) or value == UNKNOWN:
                    keys[d.name] = 0
                    continue
                if is_calendar_table(base):
                    try:
                        keys[d.name] = wh.ensure_date(base.name, value)
                    except (ValueError, TypeError):
                        raise _Reject("BadDate", f"{d.name}={value!r} is not a yyyymmdd date") from None
                    continue
                k = wh.lookup(base.name, value)
                if k is None:
                    k = wh.infer_member(base.name, value) if infer_members else 0
                keys[d.name] = k
        except _Reject as rej:
            report.add_reject(RejectRecord(r, None, rej.reason, rej.detail, crow.line))
            continue
        pending.append(FactRow(keys, measures, degenerate))
        pending_rows.append(crow)
    result = wh.append_facts(pending)
    for outcome, crow in zip(result.outcomes, pending_rows):
        if outcome.accepted:
            report.inserted += 1
        else:
            report.add_reject(RejectRecord(crow.fields, None, outcome.reason, outcome.message, crow.line))


def _load_dimension(wh: Warehouse, table: str, rows, report):
    tdef = wh.schema.table(table)
    own = set(tdef.attribute_names)
    for crow in rows:
        r = crow.fields
        nk = r.get(tdef.natural_key)
        if _missing(nk):
            report.add_reject(RejectRecord(r, None, "MissingValue", f"{tdef.natural_key} is empty", crow.line))
            continue
        attrs = {a: r[a] for a in tdef.attribute_names if a in r and a != tdef.natural_key}
        parents = {}
        for p in tdef.parents:
            pkey = wh.schema.table(p).natural_key
            names = (p,) if pkey in own else (p, pkey)
            value = _field(r, *names)
            if not _missing(value):
                parents[p] = value
        try:
            wh.upsert_member(table, nk, attrs, parents or None)
        except (MissingAttribute, UnknownAttribute) as exc:
            report.add_reject(RejectRecord(r, None, "MissingAttribute", str(exc), crow.line))
            continue
        report.inserted += 1


def load(wh: Warehouse, rows: Sequence[ConformedRow], batch_id: str, infer_members: bool = False, *,
         table: str | None = None, source_uri: str = "", ruleset: str = "",
         upstream_rejects: Sequence[RejectRecord] = ()) -> LoadReport:
    """Load conformed rows as one batch and record its lineage.

    ``table`` selects a lookup table for dimension sources; facts otherwise.
    A batch id already present in the lineage log loads nothing.
    """
    wh._require_writable()
    started = utc_now()
    report = LoadReport(batch_id, rows_in=len(rows) + len(upstream_rejects))
    if has_batch(wh, batch_id):
        report.skipped_duplicate_batch = report.rows_in
        log.info("batch %s already loaded; skipping %d rows", batch_id, report.rows_in)
        return report
    for rec in upstream_rejects:
        report.add_reject(rec)
    inferred_before = wh.inferred_created
    if table is None:
        _load_facts(wh, rows, infer_members, report)
    else:
        if wh.schema.table(table) is None:
            raise UnknownTable(f"no lookup table named {table!r}")
        _load_dimension(wh, table, rows, report)
    report.inferred_members = wh.inferred_created - inferred_before
    record_lineage(wh, LineageRecord(
        batch_id=batch_id, source_uri=source_uri, ruleset_digest=ruleset,
        started=started, finished=utc_now(), rows_in=report.rows_in, rows_out=report.inserted,
        rows_rejected=report.rejected, inferred_members=report.inferred_members,
    ))
    return report


# -- pipeline -------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    warehouse: str | None
    sources: tuple[SourceConfig, ...]


@dataclass
class SourceOutcome:
    source: SourceConfig
    status: str  # "ok" | "failed"
    report: LoadReport | None = None
    error: str = ""
    exit_code: int = 0


@dataclass
class PipelineReport:
    outcomes: list[SourceOutcome]
    checkpoint_digest: str = ""

    @property
    def lineage_ids(self) -> list[str]:
        return [o.source.batch_id for o in self.outcomes
                if o.status == "ok" and not o.report.skipped_duplicate_batch]

    @property
    def failed(self) -> list[SourceOutcome]:
        return [o for o in self.outcomes if o.status == "failed"]

    @property
    def inserted_facts(self) -> int:
        return sum(o.report.inserted for o in self.outcomes
                   if o.status == "ok" and o.source.kind == "fact")


_SOURCE_KEYS = {"uri", "format", "kind", "table", "field_map", "rules", "batch_id", "infer_members"}


def pipeline_from_dict(doc, base_dir=".") -> PipelineConfig:
    if not isinstance(doc, dict) or not isinstance(doc.get("sources"), list):
        raise ConfigInvalid("pipeline config needs a 'sources' list")
    extra = set(doc) - {"warehouse", "sources"}
    if extra:
        raise ConfigInvalid(f"unknown pipeline key(s) {sorted(extra)}")
    base = Path(base_dir)
    sources, seen = [], set()
    for i, s in enumerate(doc["sources"]):
        if not isinstance(s, dict):
            raise ConfigInvalid(f"source {i} must be an object")
        extra = set(s) - _SOURCE_KEYS
        if extra:
            raise ConfigInvalid(f"source {i}: unknown key(s) {sorted(extra)}")
        for req in ("uri", "batch_id"):
            if not isinstance(s.get(req), str) or not s[req]:
                raise ConfigInvalid(f"source {i}: {req!r} must be a non-empty string")
        if s["batch_id"] in seen:
            raise ConfigInvalid(f"source {i}: batch_id {s['batch_id']!r} repeated")
        seen.add(s["batch_id"])
        fmt = s.get("format", "csv")
        kind = s.get("kind", "fact")
        if fmt not in ("csv", "jsonl"):
            raise ConfigInvalid(f"source {i}: format must be csv or jsonl")
        if kind not in ("fact", "dimension"):
            raise ConfigInvalid(f"source {i}: kind must be fact or dimension")
        if kind == "dimension" and not s.get("table"):
            raise ConfigInvalid(f"source {i}: dimension sources need a 'table'")
        fmap = s.get("field_map", {})
        if not isinstance(fmap, dict):
            raise ConfigInvalid(f"source {i}: field_map must be an object")
        rules_json = s.get("rules", [])
        uri = Path(s["uri"])
        if not uri.is_absolute():
            uri = base / uri
        sources.append(SourceConfig(
            uri=str(uri), format=fmt, field_map=dict(fmap), batch_id=s["batch_id"], kind=kind,
            table=s.get("table"), rules=parse_rules(rules_json), rules_json=tuple(rules_json),
            infer_members=bool(s.get("infer_members", False)),
        ))
    wh = doc.get("warehouse")
    if wh is not None and not Path(wh).is_absolute():
        wh = str(base / wh)
    return PipelineConfig(wh, tuple(sources))


def load_pipeline_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SourceUnreadable(f"cannot read pipeline config {path}: {exc.strerror or exc}") from None
    except ValueError as exc:
        raise ConfigInvalid(f"{path} is not valid JSON: {exc}") from None
    return pipeline_from_dict(doc, path.parent)


def run_source(wh: Warehouse, src: SourceConfig) -> LoadReport:
    if src.kind == "dimension" and wh.schema.table(src.table) is None:
        raise ConfigInvalid(f"no lookup table named {src.table!r}")
    batch = extract(src)
    conformed, rejects = transform(batch, src.rules)
    return load(wh, conformed, src.batch_id, src.infer_members,
                table=src.table if src.kind == "dimension" else None,
                source_uri=src.uri, ruleset=ruleset_digest(src.rules_json),
                upstream_rejects=batch.rejects + rejects)


def run_pipeline(cfg: PipelineConfig, warehouse=None) -> PipelineReport:
    """Run every source (dimensions first, config order otherwise) and checkpoint."""
    root = warehouse or cfg.warehouse
    if root is None:
        raise ConfigInvalid("no warehouse given in config or on the command line")
    ordered = [s for s in cfg.sources if s.kind == "dimension"] + \
              [s for s in cfg.sources if s.kind == "fact"]
    outcomes = []
    with open_warehouse(root, writable=True) as wh:
        for src in ordered:
            try:
                report = run_source(wh, src)
            except TcmdwError as exc:
                log.warning("source %s failed: %s", src.uri, exc)
                outcomes.append(SourceOutcome(src, "failed", error=str(exc), exit_code=exc.exit_code))
                continue
            outcomes.append(SourceOutcome(src, "ok", report))
        digest = wh.checkpoint()
    return PipelineReport(outcomes, digest)
