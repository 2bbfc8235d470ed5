"""Command-line front end.

Exit status: 0 on success, 1 on data or computation errors, 2 on usage errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, bar, ingest, pipelines, preprocess, selfcheck

log = logging.getLogger("polegrowth")

OUT_ENV = "POLEGROWTH_OUT_DIR"


@dataclass
class RunConfig:
    command: str
    options: dict = field(default_factory=dict)
    input_sha256: Optional[str] = None
    version: str = __version__

    def to_dict(self) -> dict:
        return {"command": self.command, "options": self.options, "input_sha256": self.input_sha256, "version": self.version}


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config(args, command: str) -> RunConfig:
    opts = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k not in ("func",)}
    digest = sha256_of(args.input) if getattr(args, "input", None) else None
    return RunConfig(command, opts, digest)


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "reports")


def _load(args):
    if not Path(args.input).is_file():
        raise FileNotFoundError(f"input file not found: {args.input}")
    ds = ingest.parse(args.input, args.format)
    do_pre = args.preprocess if args.preprocess is not None else args.format == "wang"
    report = None
    if do_pre:
        ds, report = preprocess.preprocess(ds)
        log.info("preprocessing kept %d trees, marked %d cells", ds.n_trees, report.n_marked)
    return ds, report


def _dump_json(doc: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(pipelines.to_jsonable(doc), indent=1, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------------


def cmd_preprocess(args) -> int:
    if not Path(args.input).is_file():
        raise FileNotFoundError(f"input file not found: {args.input}")
    ds = ingest.parse(args.input, args.format)
    clean, report = preprocess.preprocess(
        ds, min_generations=args.min_generations, trim=args.trim, k_sigma=args.k_sigma, mad_constant=args.mad_constant
    )
    cfg = _config(args, "preprocess")
    _dump_json({"provenance": cfg.to_dict(), "report": report.to_dict()}, args.report)
    if args.out:
        ingest.write(clean, args.out)
    if args.json:
        ingest.save_json(clean, args.json)
    log.info("removed %d short and %d aberrant trees", len(report.trees_removed_short), len(report.trees_removed_aberrant))
    return 0


def cmd_bar_estimate(args) -> int:
    ds, pre = _load(args)
    fn = bar.estimate_comb if args.format == "wang" else bar.estimate_full_tree
    est = fn(ds, level=args.level, threads=args.threads)
    doc = {"provenance": _config(args, "bar estimate").to_dict(), "estimate": est.to_dict()}
    if pre is not None:
        doc["preprocess"] = pre.to_dict()
    _dump_json(doc, Path(args.out) if args.out else Path(os.environ.get(OUT_ENV) or ".") / "estimate.json")
    for name, t, (lo, hi) in zip(bar.PARAM_NAMES, est.theta_hat, est.ci):
        print(f"{name}  {t: .4f}  [{lo: .4f}, {hi: .4f}]")
    return 0


def cmd_bar_simulate(args) -> int:
    params = bar.BarParams(args.a0, args.b0, args.a1, args.b1, args.noise_sd, args.noise_correlation)
    sim = bar.simulate_comb if args.shape == "comb" else bar.simulate_full_tree
    ds = sim(params, args.generations, args.trees, args.missing_prob, args.seed)
    ingest.write(ds, args.out)
    log.info("wrote %d cells in %d trees to %s", len(ds), ds.n_trees, args.out)
    return 0


def cmd_rates(args) -> int:
    if not Path(args.input).is_file():
        raise FileNotFoundError(f"input file not found: {args.input}")
    table = ingest.growth_rates_from_csv(args.input)
    table.to_csv(args.out, index=False, float_format="%.10g", lineterminator="\n")
    return 0


def _analysis(name: str, run):
    def command(args) -> int:
        ds, pre = _load(args)
        report = run(ds, args)
        cfg = _config(args, f"analyze {name}")
        prov = cfg.to_dict()
        if pre is not None:
            prov["preprocess"] = pipelines.to_jsonable(pre.to_dict())
        path = pipelines.write_report(report, _out_dir(args), name, prov)
        log.info("wrote %s", path)
        return 0

    return command


def _parse_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_selftest(args) -> int:
    ok = True
    for name, err, passed in selfcheck.run():
        print(f"{'PASS' if passed else 'FAIL'}  {name}  (max abs error {err:.2e})")
        ok &= passed
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------------


def _common_data(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--input", required=True, help="data file")
    p.add_argument("--format", choices=["wang", "stewart"], default="wang")
    p.add_argument(
        "--preprocess",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="clean the data first (default: on for wang, off for stewart)",
    )
    p.add_argument("--out", help=out_help)
    p.add_argument("--seed", type=int, default=0, help="recorded for provenance")
    p.add_argument("--threads", type=int, default=1, help="per-tree worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polegrowth", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("preprocess", help="remove short/aberrant trees and mark outliers")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["wang", "stewart"], default="wang")
    p.add_argument("--min-generations", type=int, default=20)
    p.add_argument("--trim", type=float, default=0.05)
    p.add_argument("--k-sigma", type=float, default=3.0)
    p.add_argument("--mad-constant", type=float, default=preprocess.MAD_CONSTANT, help="1 gives the raw MAD")
    p.add_argument("--report", required=True, help="JSON report path")
    p.add_argument("--out", help="cleaned data file (same text format, marked rates written as -1)")
    p.add_argument("--json", help="cleaned dataset as JSON, with audit columns")
    p.set_defaults(func=cmd_preprocess)

    pb = sub.add_parser("bar", help="BAR model estimation and simulation")
    bsub = pb.add_subparsers(dest="bar_command", required=True, metavar="ACTION")
    pe = bsub.add_parser("estimate", help="least-squares fit with confidence intervals")
    _common_data(pe, "estimate.json path")
    pe.add_argument("--level", type=float, default=0.95)
    pe.set_defaults(func=cmd_bar_estimate)
    ps = bsub.add_parser("simulate", help="write a synthetic data file")
    for name in ("a0", "b0", "a1", "b1"):
        ps.add_argument(f"--{name}", type=float, required=True)
    ps.add_argument("--noise-sd", type=float, default=0.005)
    ps.add_argument("--noise-correlation", type=float, default=0.0)
    ps.add_argument("--generations", type=int, required=True)
    ps.add_argument("--trees", type=int, required=True)
    ps.add_argument("--missing-prob", type=float, default=0.0)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--shape", choices=["comb", "full"], default="comb", help="comb (wang format) or full tree (stewart)")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_bar_simulate)

    pa = sub.add_parser("analyze", help="run one of the analyses and write JSON + CSV reports")
    asub = pa.add_subparsers(dest="analysis", required=True, metavar="ANALYSIS")
    p = asub.add_parser("mg", help="mother/grandmother regression on old-pole lineages")
    _common_data(p, "output directory")
    p.set_defaults(func=_analysis("mg", lambda ds, a: pipelines.mother_grandmother_analysis(ds, threads=a.threads)))
    p = asub.add_parser("poles", help="old vs new pole means and mother correlations")
    _common_data(p, "output directory")
    p.add_argument("--level", type=float, default=0.99)
    p.set_defaults(func=_analysis("poles", lambda ds, a: pipelines.pole_comparison(ds, level=a.level)))
    p = asub.add_parser("trends", help="normalized rate against consecutive poles")
    _common_data(p, "output directory")
    p.set_defaults(func=_analysis("trends", lambda ds, a: pipelines.pole_trend_analysis(ds)))
    p = asub.add_parser("stationarity", help="ARMA(1,1) residual split-half test per tree")
    _common_data(p, "output directory")
    p.add_argument("--test", choices=["ks", "t"], default="ks")
    p.set_defaults(
        func=_analysis("stationarity", lambda ds, a: pipelines.stationarity_analysis(ds, a.test, threads=a.threads))
    )
    p = asub.add_parser("generations", help="per-generation box-plot numbers and histograms")
    _common_data(p, "output directory")
    p.add_argument("--list", type=_parse_list, default=[2, 3, 4, 5, 6, 7, 8], dest="generations")
    p.add_argument("--drop-extreme", action="store_true", help="leave out rates < 0 or > 0.08")
    p.set_defaults(
        func=_analysis(
            "generations", lambda ds, a: pipelines.generation_summary(ds, a.generations, drop_extreme=a.drop_extreme)
        )
    )

    p = sub.add_parser("rates", help="growth rates from a raw length CSV")
    p.add_argument("--input", required=True, help="CSV with cell_id,time_minutes,length[,complete_life]")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("selftest", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    # keep the hidden command out of the usage listing
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "selftest"]
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (OSError, ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"polegrowth: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
