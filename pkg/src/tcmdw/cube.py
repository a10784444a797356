"""Materialized aggregation lattice.

Each cuboid stores, per measure, the additive components (sum, count, min,
max) for every non-empty coordinate. Level values are dictionary-encoded:
codes follow the sorted order of the values, so sorting cells by code sorts
them by value.

Cuboids are computed finest-first. The base cuboid comes straight from the
fact table; every other cuboid is folded from the smallest already-built
cuboid that is finer on every dimension.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptManifest, DigestMismatch, InvalidQuery, NotFound, StaleWarehouse
from .model import SchemaDef, enumerate_lattice, parse_schema, dump_schema
from .query import QuerySpec, ResultSet, make_result, resolve_spec
from .storage import Warehouse
from .values import ALL, canonical_json, sha256_file, sha256_hex, value_sort_key

log = logging.getLogger(__name__)

FULL_LATTICE_LIMIT = 512
DEFAULT_MAX_LEVELS = 2
CUBE_FORMAT = "tcmdw-cube/1"


# -- policy ---------------------------------------------------------------

@dataclass(frozen=True)
class Policy:
    mode: str = "auto"  # "auto" | "full" | "max_levels"
    k: int = DEFAULT_MAX_LEVELS
    explicit: tuple[tuple[str, ...], ...] = ()

    def to_dict(self) -> dict:
        return {"mode": self.mode, "k": self.k, "explicit": [list(c) for c in self.explicit]}

    @classmethod
    def parse(cls, text: str | None) -> "Policy":
        if text in (None, "", "auto"):
            return cls()
        if text == "full":
            return cls("full")
        if text.startswith("k="):
            try:
                k = int(text[2:])
            except ValueError:
                raise InvalidQuery(f"bad policy {text!r}") from None
            return cls("max_levels", k)
        raise InvalidQuery(f"policy must be full or k=<n>, got {text!r}")

    def select(self, lattice: list[tuple[str, ...]]) -> list[tuple[str, ...]]:
        mode = self.mode
        if mode == "auto":
            mode = "full" if len(lattice) <= FULL_LATTICE_LIMIT else "max_levels"
        if mode == "full":
            return list(lattice)
        chosen = set(self.explicit) | {lattice[0], lattice[-1]}
        return [c for c in lattice
                if c in chosen or sum(lv != ALL for lv in c) <= self.k]


def cuboid_id(levels: tuple[str, ...]) -> str:
    return ".".join("ALL" if lv == ALL else lv for lv in levels)


# -- encoding -------------------------------------------------------------

class DimensionCodes:
    """Dictionary encoding of one dimension's level values over its base members."""

    def __init__(self, name: str, levels: tuple[str, ...], values: dict, member_codes: dict, order):
        self.name = name
        self.levels = levels
        self.values = values  # level -> list of distinct values, sorted
        self.member_codes = member_codes  # level -> np.int64 array indexed by base key
        self._finer_or_equal = order
        self._maps: dict[tuple[str, str], np.ndarray | None] = {}
        self._index: dict[str, dict] = {}

    @classmethod
    def from_warehouse(cls, wh: Warehouse, dimension: str) -> "DimensionCodes":
        dim = wh.schema.dimension(dimension)
        n = wh.member_count(dim.base_table.name)
        per_member = [wh.member_levels(dimension, k) for k in range(n)]
        values, codes = {}, {}
        for lv in dim.level_names:
            column = [m[lv] for m in per_member]
            distinct = sorted(set(column), key=value_sort_key)
            index = {v: i for i, v in enumerate(distinct)}
            values[lv] = distinct
            codes[lv] = np.fromiter((index[v] for v in column), dtype=np.int64, count=n)
        return cls(dimension, dim.level_names, values, codes, dim.finer_or_equal)

    def code_of(self, level: str) -> dict:
        idx = self._index.get(level)
        if idx is None:
            idx = self._index[level] = {v: i for i, v in enumerate(self.values[level])}
        return idx

    def level_map(self, finer: str, coarser: str) -> np.ndarray | None:
        """Array mapping codes of ``finer`` to codes of ``coarser``; None if not a function."""
        key = (finer, coarser)
        if key in self._maps:
            return self._maps[key]
        if finer == coarser:
            m = np.arange(len(self.values[finer]), dtype=np.int64)
        elif not self._finer_or_equal(finer, coarser):
            m = None
        else:
            a, b = self.member_codes[finer], self.member_codes[coarser]
            m = np.full(len(self.values[finer]), -1, dtype=np.int64)
            m[a] = b
            if not np.array_equal(m[a], b):
                m = None
        self._maps[key] = m
        return m

    def derivable(self, finer: str, coarser: str) -> bool:
        if coarser == ALL:
            return True
        if finer == ALL:
            return False
        return self.level_map(finer, coarser) is not None

    def to_dict(self) -> dict:
        return {"name": self.name, "levels": list(self.levels),
                "values": {lv: self.values[lv] for lv in self.levels},
                "member_codes": {lv: self.member_codes[lv].tolist() for lv in self.levels}}


# -- cuboids --------------------------------------------------------------

@dataclass
class Cuboid:
    levels: tuple[str, ...]  # one entry per fact dimension, ALL for rolled-up dimensions
    coords: np.ndarray  # (cells, non-All dims) int64 codes, lexicographically sorted
    aggs: dict  # measure -> (cells, 4) int64: sum, count, min, max

    @property
    def cells(self) -> int:
        return self.coords.shape[0]

    @property
    def grouped(self) -> list[int]:
        return [i for i, lv in enumerate(self.levels) if lv != ALL]


def _group_reduce(cols: list[np.ndarray], aggs: dict, radix: list[int]):
    """Group rows by code columns and fold the (sum, count, min, max) tuples."""
    n = len(next(iter(aggs.values())))
    if n == 0:
        return np.zeros((0, len(cols)), dtype=np.int64), {m: np.zeros((0, 4), dtype=np.int64) for m in aggs}
    if not cols:
        out = {m: np.array([[a[:, 0].sum(), a[:, 1].sum(), a[:, 2].min(), a[:, 3].max()]], dtype=np.int64)
               for m, a in aggs.items()}
        return np.zeros((1, 0), dtype=np.int64), out
    span = 1
    for r in radix:
        span *= max(r, 1)
    if span < 2**62:
        key = np.zeros(n, dtype=np.int64)
        for c, r in zip(cols, radix):
            key = key * max(r, 1) + c
        order = np.argsort(key, kind="stable")
        sk = key[order]
        starts = np.flatnonzero(np.r_[True, sk[1:] != sk[:-1]])
    else:
        order = np.lexsort(tuple(reversed(cols)))
        change = np.zeros(n, dtype=bool)
        change[0] = True
        for c in cols:
            sc = c[order]
            change[1:] |= sc[1:] != sc[:-1]
        starts = np.flatnonzero(change)
    coords = np.stack([c[order][starts] for c in cols], axis=1)
    out = {}
    for m, a in aggs.items():
        a = a[order]
        out[m] = np.stack([
            np.add.reduceat(a[:, 0], starts),
            np.add.reduceat(a[:, 1], starts),
            np.minimum.reduceat(a[:, 2], starts),
            np.maximum.reduceat(a[:, 3], starts),
        ], axis=1)
    return coords, out


class Cube:
    def __init__(self, schema: SchemaDef, source_digest: str, policy: Policy,
                 dims: list[DimensionCodes], materialized: list[tuple[str, ...]],
                 cell_counts: dict | None = None):
        self.schema = schema
        self.source_digest = source_digest
        self.policy = policy
        self.dims = dims
        self.dim_names = tuple(d.name for d in dims)
        self.measures = tuple(m.name for m in schema.fact.measures)
        self.lattice = enumerate_lattice(schema)
        self._lattice_pos = {c: i for i, c in enumerate(self.lattice)}
        self.materialized = sorted(materialized, key=self._lattice_pos.__getitem__)
        self._cuboids: dict[tuple[str, ...], Cuboid] = {}
        self.cell_counts: dict[tuple[str, ...], int] = dict(cell_counts or {})
        self._loader = None

    @property
    def apex(self) -> tuple[str, ...]:
        return self.lattice[-1]

    @property
    def base(self) -> tuple[str, ...]:
        return self.lattice[0]

    def rank(self, levels) -> int:
        total = 0
        for d, lv in zip(self.schema.fact_dimensions, levels):
            total += d.level_heights[lv]
        return total

    def cuboid(self, levels: tuple[str, ...]) -> Cuboid:
        levels = tuple(levels)
        cb = self._cuboids.get(levels)
        if cb is None:
            if levels not in self.cell_counts or self._loader is None:
                raise NotFound(f"cuboid {cuboid_id(levels)} is not materialized")
            cb = self._cuboids[levels] = self._loader(levels)
        return cb

    def derivable(self, finer: tuple[str, ...], coarser: tuple[str, ...]) -> bool:
        return all(d.derivable(a, b) for d, a, b in zip(self.dims, finer, coarser))

    # building -------------------------------------------------------------

    def _derive(self, parent: Cuboid, levels: tuple[str, ...]) -> Cuboid:
        cols, radix = [], []
        pcol = {dim_i: j for j, dim_i in enumerate(parent.grouped)}
        for i, lv in enumerate(levels):
            if lv == ALL:
                continue
            d = self.dims[i]
            cols.append(d.level_map(parent.levels[i], lv)[parent.coords[:, pcol[i]]])
            radix.append(len(d.values[lv]))
        coords, aggs = _group_reduce(cols, parent.aggs, radix)
        return Cuboid(levels, coords, aggs)

    def _from_facts(self, wh: Warehouse, levels: tuple[str, ...]) -> Cuboid:
        keys, measures, _ = wh.fact_columns()
        cols, radix = [], []
        for i, lv in enumerate(levels):
            if lv == ALL:
                continue
            d = self.dims[i]
            fk = np.frombuffer(keys[d.name], dtype=np.int64) if len(keys[d.name]) else np.zeros(0, np.int64)
            cols.append(d.member_codes[lv][fk])
            radix.append(len(d.values[lv]))
        aggs = {}
        for m in self.measures:
            q = np.frombuffer(measures[m], dtype=np.int64) if len(measures[m]) else np.zeros(0, np.int64)
            aggs[m] = np.stack([q, np.ones_like(q), q, q], axis=1)
        coords, aggs = _group_reduce(cols, aggs, radix)
        return Cuboid(levels, coords, aggs)

    def _best_parent(self, levels, computed) -> tuple[str, ...] | None:
        best = None
        for cand in computed:
            if cand == levels or not self.derivable(cand, levels):
                continue
            key = (self.cell_counts[cand], self.rank(cand), self._lattice_pos[cand])
            if best is None or key < best[0]:
                best = (key, cand)
        return best[1] if best else None

    def _build(self, wh: Warehouse, workers: int):
        order = sorted(self.materialized, key=lambda c: (self.rank(c), self._lattice_pos[c]))
        waves: dict[int, list] = {}
        for c in order:
            waves.setdefault(self.rank(c), []).append(c)
        computed: list[tuple[str, ...]] = []
        pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
        try:
            for rank in sorted(waves):
                plan = []
                for levels in waves[rank]:
                    parent = self._best_parent(levels, computed)
                    plan.append((levels, parent))

                def work(item):
                    levels, parent = item
                    if parent is None:
                        return self._from_facts(wh, levels)
                    return self._derive(self._cuboids[parent], levels)

                results = list(pool.map(work, plan)) if pool else [work(p) for p in plan]
                for (levels, _), cb in zip(plan, results):
                    self._cuboids[levels] = cb
                    self.cell_counts[levels] = cb.cells
                    computed.append(levels)
        finally:
            if pool:
                pool.shutdown()

    # querying -------------------------------------------------------------

    def route(self, rq) -> tuple[str, ...]:
        """Pick the cuboid that answers ``rq``: exact match, else smallest usable."""
        need: dict[str, set[str]] = {d: set() for d in self.dim_names}
        for d, lv in rq.group:
            need[d].add(lv)
        for d, lv, _ in rq.filters:
            need[d].add(lv)
        exact = tuple(next(iter(need[d])) if len(need[d]) == 1 else (ALL if not need[d] else None)
                      for d in self.dim_names)
        if exact in self.cell_counts:
            return exact
        best = None
        for cand in self.materialized:
            ok = all(all(dc.derivable(lv, want) for want in need[dc.name])
                     for dc, lv in zip(self.dims, cand))
            if ok:
                key = (self.cell_counts[cand], self._lattice_pos[cand])
                if best is None or key < best[0]:
                    best = (key, cand)
        if best is None:
            raise NotFound("no materialized cuboid can answer this query")
        return best[1]

    def answer(self, rq) -> ResultSet:
        levels = self.route(rq)
        cb = self.cuboid(levels)
        pcol = {dim_i: j for j, dim_i in enumerate(cb.grouped)}
        pos = {d: i for i, d in enumerate(self.dim_names)}
        mask = np.ones(cb.cells, dtype=bool)
        for d, lv, vals in rq.filters:
            i = pos[d]
            dc = self.dims[i]
            mapped = dc.level_map(levels[i], lv)[cb.coords[:, pcol[i]]]
            index = dc.code_of(lv)
            allowed = np.array(sorted(index[v] for v in vals if v in index), dtype=np.int64)
            mask &= np.isin(mapped, allowed)
        cols, radix = [], []
        for d, lv in rq.group:
            i = pos[d]
            dc = self.dims[i]
            cols.append(dc.level_map(levels[i], lv)[cb.coords[mask, pcol[i]]])
            radix.append(len(dc.values[lv]))
        names = rq.measure_names
        coords, aggs = _group_reduce(cols, {m: cb.aggs[m][mask] for m in names}, radix)
        value_lists = [self.dims[pos[d]].values[lv] for d, lv in rq.group]
        cells = []
        for r in range(coords.shape[0]):
            key = tuple(vl[c] for vl, c in zip(value_lists, coords[r].tolist()))
            cells.append((key, {m: tuple(aggs[m][r].tolist()) for m in names}))
        return make_result(rq, cells)

    def query(self, spec: QuerySpec) -> ResultSet:
        return self.answer(resolve_spec(self.schema, spec))

    def cells(self, levels) -> dict:
        """Decoded cells of a cuboid: {coordinate values: {measure: (sum, count, min, max)}}."""
        cb = self.cuboid(tuple(levels))
        vals = [self.dims[i].values[cb.levels[i]] for i in cb.grouped]
        out = {}
        for r in range(cb.cells):
            key = tuple(v[c] for v, c in zip(vals, cb.coords[r].tolist()))
            out[key] = {m: tuple(cb.aggs[m][r].tolist()) for m in self.measures}
        return out

    # persistence ----------------------------------------------------------

    @property
    def digest(self) -> str:
        return sha256_hex(self.source_digest + canonical_json(self.policy.to_dict()))[:16]

    def _cuboid_lines(self, cb: Cuboid):
        rendered = [[json.dumps(v, ensure_ascii=False) for v in self.dims[i].values[cb.levels[i]]]
                    for i in cb.grouped]
        coords = cb.coords.tolist()
        aggs = {m: cb.aggs[m].tolist() for m in self.measures}
        for r, row in enumerate(coords):
            c = ",".join(rv[code] for rv, code in zip(rendered, row))
            ms = ",".join(f'"{m}":[{",".join(map(str, aggs[m][r]))}]' for m in self.measures)
            yield f'{{"c":[{c}],{ms}}}\n'

    def save(self, warehouse_root) -> Path:
        """Write ``<root>/cube/<digest>/`` and point ``<root>/cube/current.json`` at it."""
        base = Path(warehouse_root) / "cube"
        out = base / self.digest
        out.mkdir(parents=True, exist_ok=True)
        dims_text = json.dumps([d.to_dict() for d in self.dims], ensure_ascii=False,
                               separators=(",", ":")) + "\n"
        (out / "dimensions.json").write_text(dims_text, encoding="utf-8")
        (out / "schema.json").write_text(dump_schema(self.schema), encoding="utf-8")
        entries = []
        for levels in self.materialized:
            name = f"cuboid_{cuboid_id(levels)}.ndjson"
            with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
                fh.writelines(self._cuboid_lines(self.cuboid(levels)))
            entries.append({"id": cuboid_id(levels), "levels": list(levels), "file": name,
                            "cells": self.cell_counts[levels], "sha256": sha256_file(out / name)})
        manifest = {
            "format": CUBE_FORMAT,
            "policy": self.policy.to_dict(),
            "source_checkpoint": self.source_digest,
            "schema_digest": self.schema.digest,
            "dimensions_sha256": sha256_hex(dims_text),
            "schema_sha256": sha256_file(out / "schema.json"),
            "cuboids": entries,
        }
        (out / "cube_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        tmp = base / "current.json.tmp"
        tmp.write_text(json.dumps({"digest": self.digest}) + "\n", encoding="utf-8")
        os.replace(tmp, base / "current.json")
        return out


def build_cube(wh: Warehouse, policy: Policy | None = None, workers: int = 1) -> Cube:
    """Materialize the policy's cuboids (always including apex and base)."""
    if wh.dirty or wh.checkpoint_digest is None:
        raise StaleWarehouse("warehouse has changes since its last checkpoint")
    policy = policy or Policy()
    schema = wh.schema
    lattice = enumerate_lattice(schema)
    dims = [DimensionCodes.from_warehouse(wh, d) for d in schema.fact.dimension_refs]
    cube = Cube(schema, wh.checkpoint_digest, policy, dims, policy.select(lattice))
    cube._build(wh, max(1, int(workers)))
    return cube


def load_cube(path) -> Cube:
    """Open a saved cube directory; cuboids are read (and digest-checked) on first use."""
    path = Path(path)
    try:
        manifest = json.loads((path / "cube_manifest.json").read_text(encoding="utf-8"))
        dims_text = (path / "dimensions.json").read_text(encoding="utf-8")
        schema_text = (path / "schema.json").read_text(encoding="utf-8")
    except (OSError, ValueError) as exc:
        raise CorruptManifest(f"{path} is not a readable cube: {exc}") from None
    if manifest.get("format") != CUBE_FORMAT:
        raise CorruptManifest(f"{path} is not a cube directory")
    if sha256_hex(dims_text) != manifest["dimensions_sha256"] or \
            sha256_hex(schema_text) != manifest["schema_sha256"]:
        raise DigestMismatch(f"{path}: dimension or schema file does not match manifest")
    schema = parse_schema(schema_text)
    dims = []
    for d in json.loads(dims_text):
        dim = schema.dimension(d["name"])
        values = {lv: list(v) for lv, v in d["values"].items()}
        codes = {lv: np.asarray(c, dtype=np.int64) for lv, c in d["member_codes"].items()}
        dims.append(DimensionCodes(d["name"], tuple(d["levels"]), values, codes, dim.finer_or_equal))
    p = manifest["policy"]
    policy = Policy(p["mode"], p["k"], tuple(tuple(c) for c in p["explicit"]))
    entries = {tuple(e["levels"]): e for e in manifest["cuboids"]}
    cube = Cube(schema, manifest["source_checkpoint"], policy, dims, list(entries),
                {lv: e["cells"] for lv, e in entries.items()})

    def loader(levels):
        e = entries[levels]
        fpath = path / e["file"]
        if sha256_file(fpath) != e["sha256"]:
            raise DigestMismatch(f"{fpath} does not match its manifest digest")
        grouped = [i for i, lv in enumerate(levels) if lv != ALL]
        index = [dims[i].code_of(levels[i]) for i in grouped]
        coords = np.zeros((e["cells"], len(grouped)), dtype=np.int64)
        aggs = {m: np.zeros((e["cells"], 4), dtype=np.int64) for m in cube.measures}
        with open(fpath, encoding="utf-8") as fh:
            for r, line in enumerate(fh):
                rec = json.loads(line)
                coords[r] = [idx[v] for idx, v in zip(index, rec["c"])]
                for m in cube.measures:
                    aggs[m][r] = rec[m]
        return Cuboid(levels, coords, aggs)

    cube._loader = loader
    return cube


def current_cube_path(warehouse_root) -> Path:
    base = Path(warehouse_root) / "cube"
    try:
        digest = json.loads((base / "current.json").read_text(encoding="utf-8"))["digest"]
    except (OSError, ValueError, KeyError):
        raise NotFound(f"no cube has been built for {warehouse_root}") from None
    return base / digest


def query(cube: Cube, spec: QuerySpec) -> ResultSet:
    return cube.query(spec)
