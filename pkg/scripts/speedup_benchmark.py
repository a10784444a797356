"""Time a year-by-country sum from the cube against a full fact scan.

    python3 scripts/speedup_benchmark.py --work /tmp/bench --rows 1000000 --runs 20

The dataset is generated with enough prescriptions to exceed ``--rows`` and
the fact file is cut to exactly that many rows before loading. An existing
warehouse in the work directory is reused.
"""

from __future__ import annotations

import argparse
import json
import resource
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from tcmdw.cube import Policy, build_cube
from tcmdw.datagen import default_config, generate_dataset
from tcmdw.etl import load_pipeline_config, run_pipeline
from tcmdw.model import builtin_tcm_schema
from tcmdw.query import GroupLevel, MeasureRef, QuerySpec, oracle_query
from tcmdw.storage import init_warehouse, open_warehouse

ROWS_PER_PRESCRIPTION = 5.8  # a little under the generator's observed mean


@dataclass(frozen=True)
class BenchConfig:
    work: Path
    rows: int = 1_000_000
    runs: int = 20
    seed: int = 42
    workers: int = 1


@dataclass
class BenchResult:
    rows: int
    etl_seconds: float | None
    build_seconds: float
    cells: int
    cube_median_ms: float
    oracle_median_s: float
    speedup: float
    max_rss_mb: float


def load(cfg: BenchConfig) -> tuple[Path, float | None]:
    wh_dir = cfg.work / "wh"
    if (wh_dir / "manifest.json").exists():
        return wh_dir, None
    data = cfg.work / "data"
    n_rx = int(cfg.rows / ROWS_PER_PRESCRIPTION) + 10
    generate_dataset(default_config(seed=cfg.seed, n_prescriptions=n_rx), data)
    facts = data / "facts.csv"
    with open(facts, encoding="utf-8", newline="") as fh:
        lines = [line for _, line in zip(range(cfg.rows + 1), fh)]
    if len(lines) != cfg.rows + 1:
        raise SystemExit(f"generator produced only {len(lines) - 1} rows")
    facts.write_text("".join(lines), encoding="utf-8", newline="")
    init_warehouse(builtin_tcm_schema(), wh_dir).close()
    t0 = time.perf_counter()
    run_pipeline(load_pipeline_config(data / "pipeline.json"), wh_dir)
    return wh_dir, time.perf_counter() - t0


def median_time(fn, runs):
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def run(cfg: BenchConfig) -> BenchResult:
    wh_dir, etl_s = load(cfg)
    wh = open_warehouse(wh_dir)
    t0 = time.perf_counter()
    cube = build_cube(wh, Policy("full"), workers=cfg.workers)
    build_s = time.perf_counter() - t0
    spec = QuerySpec((GroupLevel("Date", "year"), GroupLevel("Source", "country", "by_geography")), (),
                     (MeasureRef("quantity", "sum"),))
    assert cube.query(spec) == oracle_query(wh, spec)
    cube_s = median_time(lambda: cube.query(spec), cfg.runs)
    oracle_s = median_time(lambda: oracle_query(wh, spec), cfg.runs)
    return BenchResult(wh.fact_count, etl_s, build_s, sum(cube.cell_counts.values()), cube_s * 1e3,
                       oracle_s, oracle_s / cube_s,
                       resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, required=True)
    ap.add_argument("--rows", type=int, default=1_000_000)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--workers", type=int, default=1)
    a = ap.parse_args()
    result = run(BenchConfig(a.work, a.rows, a.runs, a.seed, a.workers))
    print(json.dumps(asdict(result), indent=2))


if __name__ == "__main__":
    main()
