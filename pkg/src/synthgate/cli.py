"""Command-line front end: ``synthgate <command> [options]``.

Commands read and write everything under the output directory and keep
``run_manifest.json`` up to date with a SHA-256 of every artifact.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from ._util import atomic_write_json, atomic_write_text, dumps_json, format_float, sha256_file
from .config import SIM_CSV, SIM_SCHEMA, SIM_TRUTH, ConfigError, ConfigIssue, RunConfig, build, read_config_file
from .risk import risk_report
from .simulate import simulate
from .synth import SyntheticRelease, load_release, release_csv, synthesize
from .tabular import DataError, SchemaError, clean, cleaning_log_json, format_schema, load_csv, load_schema, write_csv
from .utility import utility_report

log = logging.getLogger("synthgate")

MANIFEST = "run_manifest.json"
CLEANED = "cleaned.csv"
COMMANDS = ("simulate", "synthesize", "utility", "risk", "report", "validate-config")
EXIT_CONFIG = 2
EXIT_DATA = 3


def _setup_logging() -> None:
    level = os.environ.get("SYNTHGATE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _csv_text(header, rows) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(x) if isinstance(x, (float, np.floating)) else x for x in row])
    return out.getvalue()


def update_manifest(cfg: RunConfig, command: str) -> dict:
    out = cfg.out
    artifacts = {}
    for path in sorted(p for p in out.rglob("*") if p.is_file()):
        rel = path.relative_to(out).as_posix()
        if rel == MANIFEST or path.name.startswith("."):
            continue
        artifacts[rel] = sha256_file(path)
    manifest_path = out / MANIFEST
    commands = []
    if manifest_path.exists():
        try:
            commands = json.loads(manifest_path.read_text())["commands"]
        except (ValueError, KeyError):
            commands = []
    if command not in commands:
        commands.append(command)
    manifest = {"version": __version__, "config": cfg.effective(), "commands": commands, "artifacts": artifacts}
    atomic_write_json(manifest_path, manifest)
    return manifest


def _load_original(cfg: RunConfig):
    schema = load_schema(cfg.schema)
    cleaned = cfg.out / CLEANED
    source = cleaned if cleaned.exists() else cfg.input
    return clean(load_csv(source, schema))


def _load_releases(cfg: RunConfig) -> dict[str, SyntheticRelease]:
    releases = {}
    for method in cfg.methods:
        path = cfg.out / f"release_{method}.json"
        if path.exists():
            releases[method] = load_release(path.read_text())
    if not releases:
        raise FileNotFoundError(f"no release_*.json in {cfg.out}; run `synthesize` first")
    return releases


def cmd_simulate(cfg: RunConfig) -> None:
    ds, truth = simulate(cfg.sim, cfg.seed)
    write_csv(ds, cfg.out / SIM_CSV)
    atomic_write_text(cfg.out / SIM_SCHEMA, format_schema(ds.schema))
    atomic_write_json(cfg.out / SIM_TRUTH, truth)
    print(f"simulated {ds.n} rows -> {cfg.out / SIM_CSV}")


def cmd_synthesize(cfg: RunConfig, dump_chains: bool = False) -> None:
    schema = load_schema(cfg.schema)
    ds = clean(load_csv(cfg.input, schema))
    write_csv(ds, cfg.out / CLEANED)
    atomic_write_json(cfg.out / "cleaning_log.json", {"rows_in": ds.n + sum(r.dropped for r in ds.cleaning_log),
                                                      "rows_out": ds.n, "rules": cleaning_log_json(ds)})
    for method in cfg.methods:
        rel = synthesize(ds, cfg.plan, method)
        for ell in range(rel.m):
            atomic_write_text(cfg.out / f"synthetic_{method}_{ell + 1}.csv", release_csv(ds, rel, ell))
        atomic_write_json(cfg.out / f"provenance_{method}.json", rel.provenance())
        atomic_write_text(cfg.out / f"release_{method}.json", dumps_json(rel.to_dict()))
        if dump_chains:
            for model, chains in rel.chains.items():
                for chain in chains:
                    chain.dump_csv(cfg.out / "chains" / f"{method}_{model}_{chain.chain_index + 1}.csv")
        zero = float(np.mean(rel.vectors == 0))
        print(f"{method}: {rel.m} synthetic datasets, zero rate {zero:.4f}")


def cmd_utility(cfg: RunConfig) -> None:
    original = _load_original(cfg)
    releases = _load_releases(cfg)
    rep = utility_report(original, releases, cfg.utility)
    atomic_write_json(cfg.out / "utility_report.json", rep.to_dict())
    plots = rep.plot_data
    if plots:
        for source, dens in plots["density"].items():
            atomic_write_text(cfg.out / f"density_{source}.csv", _csv_text(["grid", "density"], zip(plots["grid"], dens)))
        summ = plots["violin_summary"]
        cols = ["min", "q1", "median", "q3", "max", "mean", "zero_rate"]
        atomic_write_text(
            cfg.out / "violin_summary.csv", _csv_text(["source", *cols], ([s, *(summ[s][c] for c in cols)] for s in summ))
        )
    for method, g in rep.global_.items():
        print(f"{method}: U_p={g.u_p:.6g} U_m={g.u_m:.6g} U_s={g.u_s:.6g}")


def cmd_risk(cfg: RunConfig) -> None:
    original = _load_original(cfg)
    releases = _load_releases(cfg)
    rep = risk_report(original, releases, cfg.risk)
    atomic_write_json(cfg.out / "risk_report.json", rep.to_dict(per_record=True))
    for method, attr in rep.attribute.items():
        grid, dens = attr.density()
        atomic_write_text(cfg.out / f"attr_prob_density_{method}.csv", _csv_text(["probability", "density"], zip(grid, dens)))
        hist = attr.rank_histogram()
        atomic_write_text(
            cfg.out / f"attr_rank_hist_{method}.csv", _csv_text(["rank", "count"], zip(range(1, len(hist) + 1), hist))
        )
    for method, ident in rep.identification.items():
        print(f"{method}: E={ident['E']:.6g} T={ident['T']:.6g} F={ident['F']:.6g}")


def cmd_report(cfg: RunConfig) -> None:
    parts = {}
    for name in ("utility_report.json", "risk_report.json"):
        path = cfg.out / name
        if not path.exists():
            raise FileNotFoundError(f"{path} missing; run `{name.split('_')[0]}` first")
        parts[name.split("_")[0]] = json.loads(path.read_text())
    util, risk = parts["utility"], parts["risk"]
    summary = {}
    for method in sorted(set(util["global"]) | set(risk["identification"])):
        entry = {}
        if method in util["global"]:
            g = util["global"][method]
            entry["global_utility"] = {k: g[k] for k in ("u_p", "u_m", "u_s")}
            entry["interval_overlap"] = {a: v[method]["overlap"] for a, v in util["analyses"].items() if method in v}
        if method in risk["identification"]:
            r = risk["identification"][method]
            entry["identification_risk"] = {k: r[k] for k in ("E", "T", "F")}
        if method in risk.get("attribute", {}):
            a = risk["attribute"][method]
            entry["attribute_risk"] = {k: a[k] for k in ("mean_probability", "mean_rank", "share_rank_1")}
        summary[method] = entry
    atomic_write_json(cfg.out / "summary.json", {"methods": summary})
    print(dumps_json(summary), end="")


def cmd_validate(cfg: RunConfig) -> None:
    print(cfg.to_ini(), end="")


HANDLERS = {
    "simulate": cmd_simulate,
    "synthesize": cmd_synthesize,
    "utility": cmd_utility,
    "risk": cmd_risk,
    "report": cmd_report,
    "validate-config": cmd_validate,
}


def _common_options(suppress: bool) -> argparse.ArgumentParser:
    # options are accepted before or after the command; the sub-parser copy must
    # not overwrite values given before it, hence SUPPRESS defaults there
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--out", help="output directory (paths.out)")
    common.add_argument("--seed", type=int, help="master seed (run.seed)")
    common.add_argument("--method", choices=["two-phase", "single-phase", "both"])
    common.add_argument("--m", type=int, help="number of synthetic datasets")
    common.add_argument("--radius", type=float, help="identification matching radius")
    common.add_argument("--quantiles", help="comma separated quantile levels")
    common.add_argument("--workers", type=int, help="parallel workers; never changes results")
    common.add_argument("--dump-chains", action="store_true", help="synthesize: write every MCMC chain as CSV")
    common.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthgate", description=__doc__.splitlines()[0], parents=[_common_options(False)]
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[_common_options(True)])
    return parser


def _cli_layer(args) -> dict[str, dict[str, str]]:
    layer = {
        "run": {"seed": args.seed, "method": args.method, "workers": args.workers},
        "paths": {"out": args.out},
        "synthesis": {"m": args.m},
        "risk": {"radius": args.radius},
        "utility": {"quantiles": args.quantiles},
    }
    return {s: {k: str(v) for k, v in keys.items() if v is not None} for s, keys in layer.items()}


def _report_errors(issues: list[ConfigIssue], as_json: bool) -> None:
    if as_json:
        print(json.dumps({"errors": [i.to_dict() for i in issues]}, indent=2), file=sys.stderr)
    else:
        for issue in issues:
            print(f"error: {issue}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_layer = read_config_file(args.config) if args.config else {}
    except FileNotFoundError:
        _report_errors([ConfigIssue("--config", f"file not found: {args.config}")], args.json_errors)
        return EXIT_CONFIG
    except Exception as exc:  # configparser raises several unrelated types
        _report_errors([ConfigIssue("--config", str(exc))], args.json_errors)
        return EXIT_CONFIG
    needs_inputs = args.command in ("synthesize", "utility", "risk")
    try:
        cfg = build(file_layer, _cli_layer(args), require_inputs=needs_inputs)
    except ConfigError as exc:
        _report_errors(exc.issues, args.json_errors)
        return EXIT_CONFIG
    try:
        if args.command != "validate-config":
            cfg.out.mkdir(parents=True, exist_ok=True)
            atomic_write_text(cfg.out / "effective_config.ini", cfg.to_ini())
        if args.command == "synthesize":
            cmd_synthesize(cfg, dump_chains=args.dump_chains)
        else:
            HANDLERS[args.command](cfg)
    except (DataError, SchemaError, FileNotFoundError, ValueError) as exc:
        field = "data" if isinstance(exc, (DataError, SchemaError)) else args.command
        _report_errors([ConfigIssue(field, str(exc))], args.json_errors)
        return EXIT_DATA
    if args.command != "validate-config":
        update_manifest(cfg, args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
