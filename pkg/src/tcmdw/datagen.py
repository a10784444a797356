"""Seeded synthetic TCM source files.

The default catalog below is synthetic fixture data chosen to look like
herbal prescriptions; it is not medical ground truth.

Randomness comes from SplitMix64 so the output is byte-identical on every
platform. Draw order per prescription (index i = 0..n-1):

    1. formula index    = next() % len(formula_catalog)
    2. year index       = next() % len(years)
    3. day of year      = next() % days_in(year)
    4. source index     = next() % len(sources)
    5. per ingredient, in catalog order:
           noise (ppm)  = 900000 + next() % 200001        # factor in [0.9, 1.1]

    quantity_mg = round_half_up(base_mg * country_multiplier
                                * herb_multiplier * noise / 10**6), at least 1
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
from dataclasses import asdict, dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .errors import InvalidConfig, PathNotEmpty
from .storage import calendar_attributes
from .values import canonical_json, round_half_up, sha256_hex

MASK64 = (1 << 64) - 1


class SplitMix64:
    """state += 0x9E3779B97F4A7C15; z = state;
    z = (z ^ z>>30) * 0xBF58476D1CE4E5B9; z = (z ^ z>>27) * 0x94D049BB133111EB;
    return z ^ z>>31   (all arithmetic mod 2**64)
    """

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def below(self, n: int) -> int:
        return self.next() % n


@dataclass(frozen=True)
class HerbSpec:
    name: str
    latin_name: str
    herb_type: str


@dataclass(frozen=True)
class FormulaSpec:
    name: str
    english_name: str
    formula_type: str
    ingredients: tuple[tuple[str, int], ...]  # (herb, base quantity mg)


@dataclass(frozen=True)
class CountrySpec:
    name: str
    iso_code: str
    multiplier: Decimal
    herb_multipliers: tuple[tuple[str, Decimal], ...] = ()


@dataclass(frozen=True)
class GenConfig:
    seed: int = 42
    n_prescriptions: int = 10_000
    years: tuple[int, ...] = (2009, 2010, 2011)
    countries: tuple[CountrySpec, ...] = ()
    formula_catalog: tuple[FormulaSpec, ...] = ()
    herbs: tuple[HerbSpec, ...] = ()
    source_types: tuple[str, ...] = ()
    sources_per_country: int = 3

    def to_dict(self) -> dict:
        d = asdict(self)
        for c in d["countries"]:
            c["multiplier"] = str(c["multiplier"])
            c["herb_multipliers"] = {h: str(m) for h, m in c["herb_multipliers"]}
        for f in d["formula_catalog"]:
            f["ingredients"] = [{"herb": h, "base_mg": q} for h, q in f["ingredients"]]
        d["years"] = list(d["years"])
        d["source_types"] = list(d["source_types"])
        return d

    @property
    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))


D = Decimal

DEFAULT_HERBS = (
    HerbSpec("Ge Gen", "Puerariae Radix", "Release Exterior"),
    HerbSpec("Ma Huang", "Ephedrae Herba", "Release Exterior"),
    HerbSpec("Gui Zhi", "Cinnamomi Ramulus", "Release Exterior"),
    HerbSpec("Sheng Jiang", "Zingiberis Rhizoma Recens", "Release Exterior"),
    HerbSpec("Niu Bang Zi", "Arctii Fructus", "Release Exterior"),
    HerbSpec("Bo He", "Menthae Herba", "Release Exterior"),
    HerbSpec("Chai Hu", "Bupleuri Radix", "Release Exterior"),
    HerbSpec("Bai Shao", "Paeoniae Radix Alba", "Tonify Blood"),
    HerbSpec("Shu Di Huang", "Rehmanniae Radix Preparata", "Tonify Blood"),
    HerbSpec("Da Zao", "Jujubae Fructus", "Tonify Qi"),
    HerbSpec("Zhi Gan Cao", "Glycyrrhizae Radix Preparata", "Tonify Qi"),
    HerbSpec("Gan Cao", "Glycyrrhizae Radix", "Tonify Qi"),
    HerbSpec("Ren Shen", "Ginseng Radix", "Tonify Qi"),
    HerbSpec("Bai Zhu", "Atractylodis Macrocephalae Rhizoma", "Tonify Qi"),
    HerbSpec("Shan Yao", "Dioscoreae Rhizoma", "Tonify Qi"),
    HerbSpec("Huang Qin", "Scutellariae Radix", "Clear Heat"),
    HerbSpec("Mu Dan Pi", "Moutan Cortex", "Clear Heat"),
    HerbSpec("Jin Yin Hua", "Lonicerae Flos", "Clear Heat"),
    HerbSpec("Lian Qiao", "Forsythiae Fructus", "Clear Heat"),
    HerbSpec("Ban Xia", "Pinelliae Rhizoma", "Transform Phlegm"),
    HerbSpec("Jie Geng", "Platycodi Radix", "Transform Phlegm"),
    HerbSpec("Fu Ling", "Poria", "Drain Damp"),
    HerbSpec("Ze Xie", "Alismatis Rhizoma", "Drain Damp"),
    HerbSpec("Shan Zhu Yu", "Corni Fructus", "Stabilize and Bind"),
)

DEFAULT_FORMULAS = (
    FormulaSpec("Ge Gen Tang", "Kudzu Decoction", "Cold and Flu", (
        ("Ge Gen", 12000), ("Ma Huang", 9000), ("Gui Zhi", 6000), ("Bai Shao", 6000),
        ("Sheng Jiang", 9000), ("Da Zao", 9000), ("Zhi Gan Cao", 6000))),
    FormulaSpec("Gui Zhi Tang", "Cinnamon Twig Decoction", "Cold and Flu", (
        ("Gui Zhi", 9000), ("Bai Shao", 9000), ("Sheng Jiang", 9000), ("Da Zao", 9000),
        ("Zhi Gan Cao", 6000))),
    FormulaSpec("Yin Qiao San", "Honeysuckle and Forsythia Powder", "Cold and Flu", (
        ("Jin Yin Hua", 9000), ("Lian Qiao", 9000), ("Jie Geng", 6000), ("Niu Bang Zi", 9000),
        ("Bo He", 6000), ("Gan Cao", 5000))),
    FormulaSpec("Xiao Chai Hu Tang", "Minor Bupleurum Decoction", "Harmonize", (
        ("Chai Hu", 12000), ("Huang Qin", 9000), ("Ban Xia", 9000), ("Ren Shen", 6000),
        ("Sheng Jiang", 9000), ("Da Zao", 9000), ("Zhi Gan Cao", 5000))),
    FormulaSpec("Si Jun Zi Tang", "Four Gentlemen Decoction", "Tonify Qi", (
        ("Ren Shen", 9000), ("Bai Zhu", 9000), ("Fu Ling", 9000), ("Zhi Gan Cao", 6000))),
    FormulaSpec("Liu Wei Di Huang Wan", "Six Ingredient Pill with Rehmannia", "Tonify Yin", (
        ("Shu Di Huang", 24000), ("Shan Zhu Yu", 12000), ("Shan Yao", 12000), ("Ze Xie", 9000),
        ("Mu Dan Pi", 9000), ("Fu Ling", 9000))),
)

DEFAULT_COUNTRIES = (
    CountrySpec("China", "CN", D("1.15"), (("Ge Gen", D("1.20")),)),
    CountrySpec("Australia", "AU", D("1.00")),
    CountrySpec("United States", "US", D("0.90")),
    CountrySpec("Brazil", "BR", D("0.95"), (("Ma Huang", D("0.80")),)),
    CountrySpec("Japan", "JP", D("0.85")),
)

DEFAULT_SOURCE_TYPES = ("Hospital", "Clinic", "Practitioner", "Pharmaceutical Company", "Research Centre")


def default_config(**overrides) -> GenConfig:
    cfg = GenConfig(countries=DEFAULT_COUNTRIES, formula_catalog=DEFAULT_FORMULAS,
                    herbs=DEFAULT_HERBS, source_types=DEFAULT_SOURCE_TYPES)
    return GenConfig(**{**cfg.__dict__, **overrides})


def _dec(v, what):
    try:
        d = Decimal(str(v))
    except InvalidOperation:
        raise InvalidConfig(f"{what} must be a number, got {v!r}") from None
    return d


def config_from_dict(doc: dict) -> GenConfig:
    """Read a GenConfig JSON document; omitted fields fall back to the defaults."""
    if not isinstance(doc, dict):
        raise InvalidConfig("generator config must be a JSON object")
    known = set(GenConfig.__dataclass_fields__)
    extra = set(doc) - known
    if extra:
        raise InvalidConfig(f"unknown generator config key(s) {sorted(extra)}")
    base = default_config()
    kw = {}
    try:
        if "seed" in doc:
            kw["seed"] = int(doc["seed"])
        if "n_prescriptions" in doc:
            kw["n_prescriptions"] = int(doc["n_prescriptions"])
        if "sources_per_country" in doc:
            kw["sources_per_country"] = int(doc["sources_per_country"])
        if "years" in doc:
            kw["years"] = tuple(int(y) for y in doc["years"])
        if "source_types" in doc:
            kw["source_types"] = tuple(str(s) for s in doc["source_types"])
        if "countries" in doc:
            kw["countries"] = tuple(
                CountrySpec(c["name"], c.get("iso_code", ""), _dec(c["multiplier"], "multiplier"),
                            tuple((h, _dec(m, "herb multiplier"))
                                  for h, m in sorted(c.get("herb_multipliers", {}).items())))
                for c in doc["countries"])
        if "formula_catalog" in doc:
            kw["formula_catalog"] = tuple(
                FormulaSpec(f["name"], f.get("english_name", ""), f["formula_type"],
                            tuple((i["herb"], int(i["base_mg"])) for i in f["ingredients"]))
                for f in doc["formula_catalog"])
        if "herbs" in doc:
            kw["herbs"] = tuple(HerbSpec(h["name"], h.get("latin_name", ""), h["herb_type"])
                                for h in doc["herbs"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidConfig(f"malformed generator config: {exc!r}") from None
    return GenConfig(**{**base.__dict__, **kw})


def load_config(path) -> GenConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise InvalidConfig(f"{path} is not valid JSON: {exc}") from None
    return config_from_dict(doc)


def validate_config(cfg: GenConfig) -> None:
    if cfg.n_prescriptions < 0:
        raise InvalidConfig("n_prescriptions must be >= 0")
    if not cfg.years:
        raise InvalidConfig("at least one year is required")
    if not cfg.countries:
        raise InvalidConfig("at least one country is required")
    if not cfg.formula_catalog:
        raise InvalidConfig("at least one formula is required")
    if not cfg.source_types or cfg.sources_per_country < 1:
        raise InvalidConfig("need source types and at least one source per country")
    herbs = {h.name for h in cfg.herbs}
    for c in cfg.countries:
        if c.multiplier <= 0 or any(m <= 0 for _, m in c.herb_multipliers):
            raise InvalidConfig(f"multipliers for {c.name} must be > 0")
    for f in cfg.formula_catalog:
        if not f.ingredients:
            raise InvalidConfig(f"formula {f.name} has no ingredients")
        for herb, base in f.ingredients:
            if base < 1:
                raise InvalidConfig(f"{f.name}: {herb} base quantity must be >= 1 mg")
            if herb not in herbs:
                raise InvalidConfig(f"{f.name}: herb {herb!r} is not in the herb list")
        if len({h for h, _ in f.ingredients}) != len(f.ingredients):
            raise InvalidConfig(f"formula {f.name} lists an ingredient twice")
    for y in cfg.years:
        if not 1 <= y <= 9999:
            raise InvalidConfig(f"year {y} out of range")


def source_catalog(cfg: GenConfig) -> list[tuple[str, str, CountrySpec]]:
    """(source name, source type, country) in deterministic country-major order."""
    out = []
    n = 0
    for c in cfg.countries:
        for j in range(cfg.sources_per_country):
            stype = cfg.source_types[n % len(cfg.source_types)]
            out.append((f"{c.name} {stype} {j + 1}", stype, c))
            n += 1
    return out


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _unique(seq):
    return list(dict.fromkeys(seq))


def default_pipeline(cfg: GenConfig) -> dict:
    """Pipeline config that loads the generated files (paths relative to the output dir)."""
    prefix = f"gen-{cfg.seed}-{cfg.digest[:12]}"
    seeds = [
        ("FormulaTypes", {"formula_type": "formula_type"}),
        ("Formulas", {"formula": "formula", "english_name": "english_name", "FormulaTypes": "FormulaTypes"}),
        ("HerbTypes", {"herb_type": "herb_type"}),
        ("Herbs", {"herb": "herb", "latin_name": "latin_name", "HerbTypes": "HerbTypes"}),
        ("SourceTypes", {"source_type": "source_type"}),
        ("Countries", {"country": "country", "iso_code": "iso_code"}),
        ("Sources", {"source": "source", "SourceTypes": "SourceTypes", "Countries": "Countries"}),
        ("Dates", {"day": "day", "month": "month", "quarter": "quarter", "year": "year"}),
    ]
    sources = [{"uri": f"seed_{t}.csv", "format": "csv", "kind": "dimension", "table": t,
                "field_map": fmap, "rules": [], "batch_id": f"{prefix}-{t}", "infer_members": False}
               for t, fmap in seeds]
    sources.append({
        "uri": "facts.csv", "format": "csv", "kind": "fact",
        "field_map": {"prescription_id": "prescription_id", "date": "Date", "formula": "Formula",
                      "herb": "Herb", "source": "Source", "quantity_mg": "quantity_mg"},
        "rules": [
            {"op": "date_parse", "field": "Date", "pattern": "YYYY-MM-DD"},
            {"op": "rename", "from": "quantity_mg", "to": "quantity"},
            {"op": "domain_check", "field": "quantity", "min": 1, "max": None},
        ],
        "batch_id": f"{prefix}-facts", "infer_members": False,
    })
    return {"sources": sources}


def generate_rows(cfg: GenConfig):
    """Yield fact rows (prescription_id, iso date, formula, herb, source, quantity_mg)."""
    rng = SplitMix64(cfg.seed)
    sources = source_catalog(cfg)
    million = Decimal(1_000_000)
    for i in range(cfg.n_prescriptions):
        formula = cfg.formula_catalog[rng.below(len(cfg.formula_catalog))]
        year = cfg.years[rng.below(len(cfg.years))]
        start = _dt.date(year, 1, 1)
        days = (_dt.date(year + 1, 1, 1) - start).days if year < 9999 else 365
        day = start + _dt.timedelta(days=rng.below(days))
        source, _, country = sources[rng.below(len(sources))]
        herb_mult = dict(country.herb_multipliers)
        pid = f"RX{i + 1:07d}"
        for herb, base in formula.ingredients:
            noise = 900_000 + rng.below(200_001)
            q = round_half_up(Decimal(base) * country.multiplier * herb_mult.get(herb, Decimal(1))
                              * noise / million)
            yield (pid, day.isoformat(), formula.name, herb, source, max(1, q))


def generate_dataset(cfg: GenConfig, out_dir) -> dict:
    """Write seed CSVs, facts.csv, pipeline.json and gen_manifest.json; return the manifest."""
    validate_config(cfg)
    out = Path(out_dir)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        raise PathNotEmpty(f"{out} is not an empty directory")
    out.mkdir(parents=True, exist_ok=True)

    facts = list(generate_rows(cfg))
    used_herbs = {h for f in cfg.formula_catalog for h, _ in f.ingredients}
    herbs = [h for h in cfg.herbs if h.name in used_herbs]
    sources = source_catalog(cfg)
    days = sorted({int(r[1].replace("-", "")) for r in facts})

    files = {
        "seed_FormulaTypes.csv": _csv_text(["formula_type"],
                                           [[t] for t in _unique(f.formula_type for f in cfg.formula_catalog)]),
        "seed_Formulas.csv": _csv_text(["formula", "english_name", "FormulaTypes"],
                                       [[f.name, f.english_name, f.formula_type] for f in cfg.formula_catalog]),
        "seed_HerbTypes.csv": _csv_text(["herb_type"], [[t] for t in _unique(h.herb_type for h in herbs)]),
        "seed_Herbs.csv": _csv_text(["herb", "latin_name", "HerbTypes"],
                                    [[h.name, h.latin_name, h.herb_type] for h in herbs]),
        "seed_SourceTypes.csv": _csv_text(["source_type"], [[t] for t in cfg.source_types]),
        "seed_Countries.csv": _csv_text(["country", "iso_code"], [[c.name, c.iso_code] for c in cfg.countries]),
        "seed_Sources.csv": _csv_text(["source", "SourceTypes", "Countries"],
                                      [[s, t, c.name] for s, t, c in sources]),
        "seed_Dates.csv": _csv_text(["day", "month", "quarter", "year"],
                                    [[a["day"], a["month"], a["quarter"], a["year"]]
                                     for a in map(calendar_attributes, days)]),
        "facts.csv": _csv_text(["prescription_id", "date", "formula", "herb", "source", "quantity_mg"], facts),
        "pipeline.json": json.dumps(default_pipeline(cfg), indent=2) + "\n",
    }
    for name, text in files.items():
        (out / name).write_text(text, encoding="utf-8", newline="")
    manifest = {
        "config_digest": cfg.digest,
        "seed": cfg.seed,
        "prescription_count": cfg.n_prescriptions,
        "fact_count": len(facts),
        "files": {name: sha256_hex(text) for name, text in sorted(files.items())},
    }
    (out / "gen_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    return manifest
