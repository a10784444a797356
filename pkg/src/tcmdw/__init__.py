"""Dimensional data warehouse for Traditional Chinese Medicine prescription data."""

__version__ = "0.1.0"

from .model import builtin_tcm_schema, enumerate_lattice, parse_schema, validate_schema  # noqa: E402
from .storage import init_warehouse, open_warehouse  # noqa: E402
from .query import QuerySpec, GroupLevel, MeasureRef, oracle_query  # noqa: E402
from .cube import Policy, build_cube, load_cube  # noqa: E402

__all__ = [
    "builtin_tcm_schema", "enumerate_lattice", "parse_schema", "validate_schema",
    "init_warehouse", "open_warehouse",
    "QuerySpec", "GroupLevel", "MeasureRef", "oracle_query",
    "Policy", "build_cube", "load_cube",
]
