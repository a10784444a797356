"""``tcmdw`` command line.

Exit codes: 0 success, 1 validation or data failure, 2 environment or I/O
failure, 3 usage error. Data goes to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .cube import Policy, build_cube, current_cube_path, load_cube
from .datagen import default_config, generate_dataset, load_config
from .errors import SourceUnreadable, StaleCube, TcmdwError
from .etl import load_pipeline_config, run_pipeline
from .metadata import data_dictionary, dictionary_json, get_lineage, list_lineage
from .model import builtin_tcm_schema, dump_schema, parse_schema, validate_schema
from .query import oracle_query, spec_from_dict, to_table
from .report import FORMATS, builtin_report_defs, render_report, report_def
from .storage import init_warehouse, open_warehouse

log = logging.getLogger("tcmdw")

USAGE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SourceUnreadable(f"cannot read {path}: {exc.strerror or exc}") from None


def _warehouse_dir(args) -> str:
    d = getattr(args, "dir", None) or os.environ.get("TCMDW_DIR")
    if not d:
        raise UsageError("--dir is required (or set TCMDW_DIR)")
    return d


def _emit(text: str, out=None):
    if out:
        Path(out).write_text(text, encoding="utf-8", newline="")
    else:
        sys.stdout.write(text)


# -- commands -------------------------------------------------------------

def cmd_schema_validate(args):
    schema = parse_schema(_read_text(args.file))
    report = validate_schema(schema)
    for issue in report.issues:
        print(f"{issue.severity}: {issue.location}: {issue.code}: {issue.message}", file=sys.stderr)
    n = len(report.errors)
    print(f"{n} error{'s' if n != 1 else ''}")
    return 0 if report.valid else 1


def cmd_schema_builtin(args):
    _emit(dump_schema(builtin_tcm_schema()), args.out)
    return 0


def cmd_init(args):
    schema = parse_schema(_read_text(args.schema)) if args.schema else builtin_tcm_schema()
    wh = init_warehouse(schema, _warehouse_dir(args))
    digest = wh.checkpoint_digest
    wh.close()
    print(f"initialized {wh.root} checkpoint {digest}")
    return 0


def cmd_datagen(args):
    cfg = load_config(args.config) if args.config else default_config()
    manifest = generate_dataset(cfg, args.out)
    print(f"wrote {manifest['fact_count']} fact rows for {manifest['prescription_count']} "
          f"prescriptions to {args.out} (config {manifest['config_digest'][:12]})")
    return 0


def cmd_etl_run(args):
    cfg = load_pipeline_config(args.config)
    target = args.dir or os.environ.get("TCMDW_DIR") or cfg.warehouse
    rep = run_pipeline(cfg, target)
    rows = []
    code = 0
    for o in rep.outcomes:
        if o.status == "failed":
            rows.append([o.source.batch_id, "failed", "", "", "", "", ""])
            print(f"error: {o.source.uri}: {o.error}", file=sys.stderr)
            code = max(code, o.exit_code)
            continue
        r = o.report
        status = "skipped" if r.skipped_duplicate_batch else "ok"
        rows.append([r.batch_id, status, str(r.rows_in), str(r.inserted), str(r.skipped_duplicate_batch),
                     str(r.rejected), str(r.inferred_members)])
        if r.rows_in and r.rejected / r.rows_in > args.max_reject_rate:
            print(f"error: {r.batch_id}: {r.rejected} of {r.rows_in} rows rejected "
                  f"(limit {args.max_reject_rate:.2%})", file=sys.stderr)
            code = max(code, 1)
        for rec in r.rejects[:5]:
            print(f"reject: {r.batch_id} line {rec.line}: {rec.reason}: {rec.detail}", file=sys.stderr)
    sys.stdout.write(to_table(["batch", "status", "in", "inserted", "skipped", "rejected", "inferred"], rows))
    print(f"checkpoint {rep.checkpoint_digest}")
    return code


def cmd_cube_build(args):
    root = _warehouse_dir(args)
    policy = Policy.parse(args.policy)
    with open_warehouse(root, writable=True) as wh:
        cube = build_cube(wh, policy, workers=args.workers)
        path = cube.save(root)
    total = sum(cube.cell_counts.values())
    print(f"built {len(cube.materialized)} cuboids, {total} cells -> {path}")
    return 0


def _open_cube(wh, root):
    cube = load_cube(current_cube_path(root))
    if cube.source_digest != wh.checkpoint_digest:
        raise StaleCube("cube is older than the warehouse checkpoint; run `tcmdw cube build`")
    return cube


def cmd_query(args):
    root = _warehouse_dir(args)
    try:
        doc = json.loads(_read_text(args.spec))
    except ValueError as exc:
        raise TcmdwError(f"{args.spec} is not valid JSON: {exc}") from None
    spec = spec_from_dict(doc)
    wh = open_warehouse(root)
    result = oracle_query(wh, spec) if args.oracle else _open_cube(wh, root).query(spec)
    _emit(result.render(args.format))
    return 0


def _params(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise UsageError(f"--param expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v
    return out


def cmd_report_render(args):
    root = _warehouse_dir(args)
    rdef = report_def(args.name, _params(args.param))
    wh = open_warehouse(root)
    rendered = render_report(_open_cube(wh, root), wh, rdef, args.format)
    _emit(rendered.content, args.out)
    if args.out:
        print(f"wrote {args.out}", file=sys.stderr)
    return 0


def cmd_report_list(args):
    rows = []
    for d in builtin_report_defs():
        params = ", ".join(p.name + ("" if p.required else "?") for p in d.param_specs)
        rows.append([d.name, params, d.description])
    sys.stdout.write(to_table(["report", "params", "description"], rows))
    return 0


def cmd_catalog_show(args):
    wh = open_warehouse(_warehouse_dir(args))
    dd = data_dictionary(wh)
    if args.format == "json":
        sys.stdout.write(dictionary_json(dd))
        return 0
    rows = []
    for t in dd.tables:
        for c in t.columns:
            rows.append([t.name, t.kind, str(t.row_count), ",".join(t.parents), c.name, c.kind, c.description])
    print(f"schema {dd.schema_name} digest {dd.schema_digest}")
    sys.stdout.write(to_table(["table", "kind", "rows", "parents", "column", "type", "description"], rows))
    return 0


def cmd_lineage_show(args):
    wh = open_warehouse(_warehouse_dir(args))
    records = [get_lineage(wh, args.batch)] if args.batch else list_lineage(wh)
    if args.format == "json":
        sys.stdout.write(json.dumps([asdict(r) for r in records], indent=2) + "\n")
        return 0
    rows = [[r.batch_id, r.finished, str(r.rows_in), str(r.rows_out), str(r.rows_rejected),
             str(r.rows_skipped), str(r.inferred_members), r.ruleset_digest[:12], r.source_uri]
            for r in records]
    sys.stdout.write(to_table(["batch", "finished", "in", "out", "rejected", "skipped", "inferred",
                               "ruleset", "source"], rows))
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tcmdw", description="TCM dimensional warehouse")
    p.add_argument("--version", action="version", version=f"tcmdw {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_dir(sp):
        sp.add_argument("--dir", required=False, help="warehouse directory (default: $TCMDW_DIR)")
        return sp

    schema = sub.add_parser("schema", help="schema documents")
    ssub = schema.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sv = ssub.add_parser("validate", help="check a schema file")
    sv.add_argument("file")
    sv.set_defaults(func=cmd_schema_validate)
    sb = ssub.add_parser("builtin", help="print the built-in TCM schema")
    sb.add_argument("--out")
    sb.set_defaults(func=cmd_schema_builtin)

    init = with_dir(sub.add_parser("init", help="create an empty warehouse"))
    init.add_argument("--schema", help="schema file (default: built-in TCM schema)")
    init.set_defaults(func=cmd_init)

    dg = sub.add_parser("datagen", help="write a seeded synthetic dataset")
    dg.add_argument("--config", help="generator config JSON (default: built-in defaults)")
    dg.add_argument("--out", required=True)
    dg.set_defaults(func=cmd_datagen)

    etl = sub.add_parser("etl", help="extract, transform, load")
    esub = etl.add_subparsers(dest="action", required=True, parser_class=_Parser)
    er = with_dir(esub.add_parser("run", help="run a pipeline config"))
    er.add_argument("--config", required=True)
    er.add_argument("--max-reject-rate", type=float, default=0.05,
                    help="fail (exit 1) when a batch rejects more than this fraction (default 0.05)")
    er.set_defaults(func=cmd_etl_run)

    cube = sub.add_parser("cube", help="aggregation cube")
    csub = cube.add_subparsers(dest="action", required=True, parser_class=_Parser)
    cb = with_dir(csub.add_parser("build", help="materialize cuboids"))
    cb.add_argument("--policy", help="full or k=<n> (default: full up to 512 cuboids, else k=2)")
    cb.add_argument("--workers", type=int, default=1)
    cb.set_defaults(func=cmd_cube_build)

    q = with_dir(sub.add_parser("query", help="answer a query spec"))
    q.add_argument("--spec", required=True)
    q.add_argument("--oracle", action="store_true", help="answer by full fact scan instead of the cube")
    q.add_argument("--format", choices=("table", "csv", "json"), default="table")
    q.set_defaults(func=cmd_query)

    rep = sub.add_parser("report", help="analytical reports")
    rsub = rep.add_subparsers(dest="action", required=True, parser_class=_Parser)
    rr = with_dir(rsub.add_parser("render", help="render a built-in report"))
    rr.add_argument("--name", required=True)
    rr.add_argument("--param", action="append", metavar="KEY=VALUE")
    rr.add_argument("--format", choices=FORMATS, default="table")
    rr.add_argument("--out")
    rr.set_defaults(func=cmd_report_render)
    rl = rsub.add_parser("list", help="list built-in reports")
    rl.set_defaults(func=cmd_report_list)

    cat = sub.add_parser("catalog", help="data dictionary")
    catsub = cat.add_subparsers(dest="action", required=True, parser_class=_Parser)
    cs = with_dir(catsub.add_parser("show"))
    cs.add_argument("--format", choices=("table", "json"), default="table")
    cs.set_defaults(func=cmd_catalog_show)

    lin = sub.add_parser("lineage", help="load lineage")
    linsub = lin.add_subparsers(dest="action", required=True, parser_class=_Parser)
    ls = with_dir(linsub.add_parser("show"))
    ls.add_argument("--batch")
    ls.add_argument("--format", choices=("table", "json"), default="table")
    ls.set_defaults(func=cmd_lineage_show)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE
    except TcmdwError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0


def main() -> None:
    sys.exit(run())
