"""Generate the default seeded dataset, load it, and render the country comparison report.

    python3 scripts/country_comparison.py --work /tmp/cmp --country China --year 2010

Writes table, csv and chartspec renderings into the work directory and
prints the table.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

from tcmdw.cube import Policy, build_cube
from tcmdw.datagen import default_config, generate_dataset
from tcmdw.etl import load_pipeline_config, run_pipeline
from tcmdw.model import builtin_tcm_schema
from tcmdw.report import render_report, report_def
from tcmdw.storage import init_warehouse, open_warehouse


@dataclass(frozen=True)
class ComparisonConfig:
    work: Path
    formula: str = "Ge Gen Tang"
    year: int = 2010
    country: str = "China"
    seed: int = 42
    n_prescriptions: int = 10_000


def prepare(cfg: ComparisonConfig) -> Path:
    wh_dir = cfg.work / "wh"
    if (wh_dir / "manifest.json").exists():
        return wh_dir
    data = cfg.work / "data"
    generate_dataset(default_config(seed=cfg.seed, n_prescriptions=cfg.n_prescriptions), data)
    init_warehouse(builtin_tcm_schema(), wh_dir).close()
    run_pipeline(load_pipeline_config(data / "pipeline.json"), wh_dir)
    return wh_dir


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", type=Path, required=True)
    ap.add_argument("--formula", default="Ge Gen Tang")
    ap.add_argument("--year", type=int, default=2010)
    ap.add_argument("--country", default="China")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--prescriptions", type=int, default=10_000)
    a = ap.parse_args()
    cfg = ComparisonConfig(a.work, a.formula, a.year, a.country, a.seed, a.prescriptions)

    wh = open_warehouse(prepare(cfg))
    cube = build_cube(wh, Policy("full"))
    rdef = report_def("ingredient_comparison",
                      {"formula": cfg.formula, "year": cfg.year, "country": cfg.country})
    for fmt, ext in (("table", "txt"), ("csv", "csv"), ("chartspec", "json")):
        out = render_report(cube, wh, rdef, fmt).content
        (cfg.work / f"comparison.{ext}").write_text(out, encoding="utf-8")
        if fmt == "table":
            print(out, end="")


if __name__ == "__main__":
    main()
