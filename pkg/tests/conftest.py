import shutil
import sys
from pathlib import Path

import pytest

from tcmdw.cube import Policy, build_cube
from tcmdw.datagen import default_config, generate_dataset
from tcmdw.etl import load_pipeline_config, run_pipeline
from tcmdw.model import builtin_tcm_schema, schema_from_dict
from tcmdw.storage import FactRow, init_warehouse, open_warehouse


@pytest.fixture(scope="session")
def seeded_dir(tmp_path_factory) -> Path:
    """Seed-42, 10,000-prescription dataset loaded through the full ETL path."""
    base = tmp_path_factory.mktemp("seeded")
    generate_dataset(default_config(), base / "data")
    init_warehouse(builtin_tcm_schema(), base / "wh").close()
    report = run_pipeline(load_pipeline_config(base / "data" / "pipeline.json"), base / "wh")
    assert not report.failed
    return base


@pytest.fixture(scope="session")
def seeded_wh(seeded_dir):
    return open_warehouse(seeded_dir / "wh")


@pytest.fixture(scope="session")
def seeded_cube(seeded_wh):
    return build_cube(seeded_wh, Policy("full"))


@pytest.fixture
def fresh_copy(seeded_dir, tmp_path):
    """Private copy of the seeded warehouse for tests that mutate it."""
    dst = tmp_path / "wh"
    shutil.copytree(seeded_dir / "wh", dst, ignore=shutil.ignore_patterns("cube"))
    return dst


@pytest.fixture
def empty_wh(tmp_path):
    wh = init_warehouse(builtin_tcm_schema(), tmp_path / "wh")
    yield wh
    wh.close()


# A small two-dimension schema used where the full TCM schema is overkill.
TINY_DOC = {
    "name": "tiny",
    "dimensions": [
        {"name": "Item", "tables": [
            {"name": "Items", "natural_key": "item",
             "attributes": [{"name": "item", "kind": "text"}], "parent": "Groups"},
            {"name": "Groups", "natural_key": "group", "attributes": [{"name": "group", "kind": "text"}]},
        ], "hierarchies": [{"name": "by_group", "levels": [
            {"level": "item", "attribute": "item"}, {"level": "group", "attribute": "group"}]}]},
        {"name": "Place", "tables": [
            {"name": "Places", "natural_key": "place", "attributes": [{"name": "place", "kind": "text"}]},
        ], "hierarchies": [{"name": "flat", "levels": [{"level": "place", "attribute": "place"}]}]},
    ],
    "fact": {"name": "Sales", "dimensions": ["Item", "Place"],
             "degenerate_keys": [{"name": "ticket", "kind": "text"}],
             "measures": [{"name": "qty", "unit": "units", "min": 1}]},
}

TINY_ITEMS = {"a1": "A", "a2": "A", "b1": "B", "c1": "C"}
TINY_PLACES = ["north", "south", "east"]


def tiny_schema():
    return schema_from_dict(TINY_DOC)


def make_tiny_warehouse(root, facts):
    """``facts``: iterable of (item, place, qty). Returns a checkpointed writable warehouse."""
    wh = init_warehouse(tiny_schema(), root)
    for g in sorted(set(TINY_ITEMS.values())):
        wh.upsert_member("Groups", g, {})
    for item, g in TINY_ITEMS.items():
        wh.upsert_member("Items", item, {}, g)
    for p in TINY_PLACES:
        wh.upsert_member("Places", p, {})
    rows = [FactRow({"Item": wh.lookup("Items", i), "Place": wh.lookup("Places", p)}, {"qty": q},
                    {"ticket": f"t{n}"}) for n, (i, p, q) in enumerate(facts)]
    result = wh.append_facts(rows)
    assert not result.rejected
    wh.checkpoint()
    return wh


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
