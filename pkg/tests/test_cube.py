import filecmp
import random

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import TINY_ITEMS, TINY_PLACES, make_tiny_warehouse
from tcmdw.cube import Policy, build_cube, current_cube_path, cuboid_id, load_cube
from tcmdw.errors import DigestMismatch, InvalidQuery, StaleWarehouse
from tcmdw.model import enumerate_lattice
from tcmdw.query import GroupLevel, MeasureRef, QuerySpec, oracle_query
from tcmdw.storage import FactRow, Filter, open_warehouse
from tcmdw.values import ALL

AGGS = tuple(MeasureRef("quantity", a) for a in ("sum", "count", "min", "max", "avg"))


def spec_for(schema, levels, measures=AGGS, filters=()):
    group = tuple(GroupLevel(d, lv) for d, lv in zip(schema.fact.dimension_refs, levels) if lv != ALL)
    return QuerySpec(group, filters, measures)


def test_policy_parse_and_select(seeded_wh):
    lat = enumerate_lattice(seeded_wh.schema)
    assert Policy.parse(None).select(lat) == lat
    assert Policy.parse("full").select(lat) == lat
    sel = Policy.parse("k=1").select(lat)
    assert lat[0] in sel and lat[-1] in sel
    # apex, base, and every cuboid with exactly one grouped dimension: 4 + 2 + 2 + 3
    assert len(sel) == 1 + 1 + 11
    with pytest.raises(InvalidQuery):
        Policy.parse("some")


def test_default_policy_switches_above_512():
    from itertools import product
    choices = [f"l{i}" for i in range(8)] + [ALL]
    lat = list(product(choices, repeat=3))  # 729 cuboids
    sel = Policy().select(lat)
    # apex + 3*8 singles + 3*64 pairs, plus the base cuboid
    assert len(sel) == 1 + 24 + 192 + 1
    assert lat[0] in sel and lat[-1] in sel


def test_cell_invariants(seeded_cube):
    for levels in seeded_cube.materialized:
        cb = seeded_cube.cuboid(levels)
        agg = cb.aggs["quantity"]
        assert (agg[:, 1] >= 1).all()
        assert (agg[:, 2] <= agg[:, 3]).all()
        assert (agg[:, 0] >= agg[:, 1]).all()


def test_apex_matches_fact_columns(seeded_wh, seeded_cube):
    _, measures, _ = seeded_wh.fact_columns()
    q = list(measures["quantity"])
    apex = seeded_cube.cells((ALL,) * 4)
    assert apex == {(): {"quantity": (sum(q), len(q), min(q), max(q))}}


def test_random_specs_match_oracle(seeded_wh, seeded_cube):
    schema = seeded_wh.schema
    rng = random.Random(2024)
    dims = schema.fact_dimensions
    years, countries = [2009, 2010, 2011, 1999], ["China", "Japan", "Brazil", "Atlantis"]
    herbs = ["Ge Gen", "Ma Huang", "Gui Zhi", "Fu Ling"]
    for _ in range(200):
        group = []
        for d in dims:
            h = rng.choice(d.hierarchies)
            lv = rng.choice(h.level_names + (ALL, ALL))
            if lv != ALL:
                group.append(GroupLevel(d.name, lv, h.name))
        filters = []
        if rng.random() < 0.5:
            filters.append(Filter("Date", "year", tuple(rng.sample(years, rng.randint(1, 2)))))
        if rng.random() < 0.4:
            filters.append(Filter("Source", "country", tuple(rng.sample(countries, rng.randint(1, 2)))))
        if rng.random() < 0.3:
            filters.append(Filter("Herb", "herb", tuple(rng.sample(herbs, 2))))
        spec = QuerySpec(tuple(group), tuple(filters), AGGS)
        assert seeded_cube.query(spec) == oracle_query(seeded_wh, spec), spec


def test_country_comparison_query_matches_oracle(seeded_wh, seeded_cube):
    spec = QuerySpec((GroupLevel("Herb", "herb"),),
                     (Filter("Formula", "formula", ("Ge Gen Tang",)),
                      Filter("Source", "country", ("China",), "by_geography"),
                      Filter("Date", "year", (2010,))),
                     (MeasureRef("quantity", "avg"),))
    rs = seeded_cube.query(spec)
    assert rs == oracle_query(seeded_wh, spec)
    assert len(rs) == 7


def test_grand_total_and_empty_year(seeded_wh, seeded_cube):
    total = seeded_cube.query(QuerySpec((), (), (MeasureRef("quantity", "sum"),)))
    assert total.rows == ((sum(seeded_wh.fact_columns()[1]["quantity"]),),)
    empty = seeded_cube.query(QuerySpec((GroupLevel("Herb", "herb"),), (Filter("Date", "year", (1999,)),),
                                        (MeasureRef("quantity", "sum"),)))
    assert empty.rows == ()


def test_routing_prefers_exact_then_smallest(seeded_wh):
    cube = build_cube(seeded_wh, Policy("max_levels", 1))
    from tcmdw.query import resolve_spec
    exact = resolve_spec(seeded_wh.schema, QuerySpec((GroupLevel("Date", "year"),), (), AGGS))
    assert cube.route(exact) == ("year", ALL, ALL, ALL)
    two = resolve_spec(seeded_wh.schema, QuerySpec(
        (GroupLevel("Date", "year"), GroupLevel("Source", "country", "by_geography")), (), AGGS))
    assert cube.route(two) == cube.base  # only the base cuboid covers two dimensions under k=1


@settings(max_examples=25, deadline=None)
@given(st.data())
def test_partial_policy_matches_oracle(seeded_wh, data):
    cube = _partial_cube(seeded_wh)
    lat = enumerate_lattice(seeded_wh.schema)
    levels = data.draw(st.sampled_from(lat))
    spec = spec_for(seeded_wh.schema, levels)
    assert cube.query(spec) == _oracle_cached(seeded_wh, levels)


_CACHE = {}


def _partial_cube(wh):
    if "k1" not in _CACHE:
        _CACHE["k1"] = build_cube(wh, Policy("max_levels", 1))
    return _CACHE["k1"]


def _oracle_cached(wh, levels):
    key = ("oracle", levels)
    if key not in _CACHE:
        _CACHE[key] = oracle_query(wh, spec_for(wh.schema, levels))
    return _CACHE[key]


def test_rollup_additivity_sampled(seeded_cube):
    """Parent cells equal the fold of their children, one hierarchy step at a time."""
    cube = seeded_cube
    schema = cube.schema
    rng = random.Random(7)
    lat = cube.lattice
    memo = {}

    def cells(levels):
        if levels not in memo:
            memo[levels] = cube.cells(levels)
        return memo[levels]

    checked = 0
    while checked < 150:
        parent = rng.choice(lat)
        i = rng.randrange(4)
        dim = schema.fact_dimensions[i]
        h = rng.choice(dim.hierarchies)
        names = h.level_names + (ALL,)
        if parent[i] not in names or parent[i] == names[0]:
            continue
        child_level = names[names.index(parent[i]) - 1]
        child = parent[:i] + (child_level,) + parent[i + 1:]
        codes = cube.dims[i]
        pcells, ccells = cells(parent), cells(child)
        grouped_before = sum(lv != ALL for lv in parent[:i])
        folded = {}
        for ckey, agg in ccells.items():
            cval = ckey[grouped_before]
            if parent[i] == ALL:
                pkey = ckey[:grouped_before] + ckey[grouped_before + 1:]
            else:
                m = codes.level_map(child_level, parent[i])
                pval = codes.values[parent[i]][m[codes.code_of(child_level)[cval]]]
                pkey = ckey[:grouped_before] + (pval,) + ckey[grouped_before + 1:]
            s, c, lo, hi = agg["quantity"]
            f = folded.setdefault(pkey, [0, 0, lo, hi])
            f[0] += s
            f[1] += c
            f[2] = min(f[2], lo)
            f[3] = max(f[3], hi)
        assert {k: tuple(v) for k, v in folded.items()} == {k: v["quantity"] for k, v in pcells.items()}
        checked += 1


def test_empty_fact_table_gives_empty_cuboids(empty_wh):
    empty_wh.checkpoint()
    cube = build_cube(empty_wh)
    assert len(cube.materialized) == 180
    assert all(n == 0 for n in cube.cell_counts.values())
    assert cube.query(QuerySpec((), (), AGGS)).rows == ()


def test_stale_warehouse(empty_wh):
    empty_wh.upsert_member("Countries", "Korea", {"iso_code": "KR"})
    with pytest.raises(StaleWarehouse):
        build_cube(empty_wh)


def test_workers_serialize_identically(seeded_wh, tmp_path):
    a = build_cube(seeded_wh, workers=1).save(tmp_path / "a")
    b = build_cube(seeded_wh, workers=4).save(tmp_path / "b")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    _, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert mismatch == [] and errors == []
    assert len([n for n in names if n.startswith("cuboid_")]) == 180


def test_saved_cube_round_trip_and_tamper(seeded_wh, seeded_cube, tmp_path):
    path = seeded_cube.save(tmp_path)
    assert current_cube_path(tmp_path) == path
    loaded = load_cube(path)
    some = [seeded_cube.lattice[0], ("year", ALL, "herb", "country"), seeded_cube.apex]
    for lv in some:
        assert loaded.cells(lv) == seeded_cube.cells(lv)
    victim = path / f"cuboid_{cuboid_id(('month', 'formula', ALL, ALL))}.ndjson"
    text = victim.read_text()
    victim.write_text(text.replace("[", "[ ", 1))
    fresh = load_cube(path)
    with pytest.raises(DigestMismatch):
        fresh.cuboid(("month", "formula", ALL, ALL))


facts_st = st.lists(st.tuples(st.sampled_from(sorted(TINY_ITEMS)), st.sampled_from(TINY_PLACES),
                              st.integers(1, 10_000)), max_size=40)


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(facts_st, st.integers(2, 9))
def test_scale_equivariance(tmp_path_factory, facts, c):
    base = tmp_path_factory.mktemp("scale")
    wh1 = make_tiny_warehouse(base / "a", facts)
    wh2 = make_tiny_warehouse(base / "b", [(i, p, q * c) for i, p, q in facts])
    c1, c2 = build_cube(wh1), build_cube(wh2)
    for levels in c1.materialized:
        cells1, cells2 = c1.cells(levels), c2.cells(levels)
        assert cells1.keys() == cells2.keys()
        for k, v in cells1.items():
            s, n, lo, hi = v["qty"]
            assert cells2[k]["qty"] == (s * c, n, lo * c, hi * c)
    wh1.close()
    wh2.close()


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(facts_st, st.data())
def test_tiny_cube_equals_oracle(tmp_path_factory, facts, data):
    wh = make_tiny_warehouse(tmp_path_factory.mktemp("tiny") / "w", facts)
    policy = data.draw(st.sampled_from([Policy("full"), Policy("max_levels", 0), Policy("max_levels", 1)]))
    cube = build_cube(wh, policy)
    group = []
    for dim, levels in (("Item", ["item", "group", ALL]), ("Place", ["place", ALL])):
        lv = data.draw(st.sampled_from(levels))
        if lv != ALL:
            group.append(GroupLevel(dim, lv))
    filters = []
    if data.draw(st.booleans()):
        filters.append(Filter("Item", "group", tuple(data.draw(st.sets(st.sampled_from("ABCZ"), min_size=1)))))
    if data.draw(st.booleans()):
        filters.append(Filter("Place", "place", (data.draw(st.sampled_from(TINY_PLACES)),)))
    aggs = tuple(MeasureRef("qty", a) for a in ("sum", "count", "min", "max", "avg"))
    spec = QuerySpec(tuple(group), tuple(filters), aggs)
    assert cube.query(spec) == oracle_query(wh, spec)
    wh.close()
