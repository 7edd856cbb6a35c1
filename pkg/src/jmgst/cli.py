"""Command-line front end.

Every subcommand reads a JSON config (defaults when ``--config`` is
omitted), writes its data to files under ``--out`` and reports progress on
stdout.  Each artifact carries the config digest and the seed.  Data files
contain no timings, so rerunning a command reproduces them byte for byte; the
run manifest differs only in its ``wall_time_s`` field.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 a
verification check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import cscore, gst, harness, verify
from .errors import JmgstError, NumericalError, ValidationError
from .params import METHODS, RunConfig, load_config
from .simulate import read_trial_csv, simulate_trial, snapshot, write_trial_csv

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3

#: replicate count used for operating characteristics at full scale
FULL_SCALE_REPLICATES = 10_000


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit 2, which means "numeric" here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, help="worker processes for Monte Carlo runs")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.add_argument("--paper-scale", action="store_true",
                   help=f"use {FULL_SCALE_REPLICATES} replicates and n = 4800 for the matrix table")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jmgst", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _common()
    sub.add_parser("simulate", parents=[common], help="simulate one trial and write it as CSV")
    fit = sub.add_parser("fit", parents=[common], help="conditional-score fit of a trial CSV")
    fit.add_argument("--visits", type=Path, required=True)
    fit.add_argument("--patients", type=Path, required=True)
    fit.add_argument("--analysis", type=int, help="1-based analysis index (default: config)")
    sub.add_parser("design", parents=[common], help="planned error-spending boundaries")
    oc = sub.add_parser("oc", parents=[common], help="operating characteristics by simulation")
    oc.add_argument("--method", choices=METHODS)
    oc.add_argument("--eta", type=float, help="true treatment effect (default: config)")
    ss = sub.add_parser("samplesize", parents=[common], help="simulated sample size for target power")
    ss.add_argument("--method", choices=METHODS)
    tab = sub.add_parser("table", parents=[common], help="reproduce a summary table")
    tab.add_argument("--which", choices=("table1", "table2", "table3"))
    ver = sub.add_parser("verify", parents=[common], help="run the numerical self-checks")
    ver.add_argument("--quick", action="store_true", help="smaller randomized suites")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.paper_scale:
        changes.update(replicates=FULL_SCALE_REPLICATES, table1_n=4800)
    for name in ("seed", "jobs", "replicates"):
        value = getattr(args, name)
        if value is not None:
            changes[name] = value
    if args.out is not None:
        changes["out"] = str(args.out)
    if getattr(args, "method", None):
        changes["method"] = args.method
    if getattr(args, "analysis", None) is not None:
        changes["analysis"] = args.analysis
    if getattr(args, "eta", None) is not None:
        changes["eta_true"] = args.eta
    if getattr(args, "which", None):
        changes["table"] = args.which
    try:
        return cfg.replace(**changes)
    except TypeError as exc:
        raise ValidationError(str(exc)) from exc


class Run:
    """Output routing for one command: directory, provenance tag, manifest."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.digest = cfg.digest()
        self.tag = f"jmgst {command} config={self.digest} seed={cfg.seed}"
        self.files: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_json(self, name: str, doc: dict) -> None:
        doc = {"config_digest": self.digest, "seed": self.cfg.seed, **doc}
        with open(self.path(name), "w") as fh:
            json.dump(_plain(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_rows(self, name: str, rows) -> None:
        harness.write_rows(self.path(name), rows, comment=self.tag)

    def finish(self, extra: Optional[dict] = None) -> None:
        doc = {"command": self.command, "files": sorted(self.files)}
        doc.update(extra or {})
        harness.write_manifest(self.out / f"{self.command}_manifest.json", self.cfg.to_dict(), self.digest,
                               self.cfg.seed, wall_time=time.perf_counter() - self.t0, extra=doc)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _say(msg: str) -> None:
    print(msg, flush=True)


# --------------------------------------------------------------------------
# Subcommands


def cmd_simulate(cfg: RunConfig) -> int:
    run = Run(cfg, "simulate")
    trial = simulate_trial(cfg.params, cfg.design, cfg.seed)
    write_trial_csv(trial, run.path("trial_visits.csv"), run.path("trial_patients.csv"), comment=run.tag)
    run.finish({"n": trial.n})
    _say(f"simulated {trial.n} patients -> {run.out}")
    return EXIT_OK


def fit_trial(trial, cfg: RunConfig) -> tuple:
    """Sequential fits up to ``cfg.analysis`` with warm starts, as in the harness."""
    fits = []
    for k in range(cfg.analysis):
        snap = snapshot(trial, k, cfg.design)
        init = (fits[-1].gamma_hat, fits[-1].eta_hat) if fits else (0.0, 0.0)
        fits.append(cscore.fit_snapshot(snap, init=init))
    return fits, cscore.cross_covariance(fits, n=cfg.design.n)


def cmd_fit(cfg: RunConfig, visits: Path, patients: Path) -> int:
    run = Run(cfg, "fit")
    trial = read_trial_csv(visits, patients, cfg.design)
    if trial.n != cfg.design.n:
        cfg = cfg.replace(design=cfg.design.replace(n=trial.n))
    fits, cov = fit_trial(trial, cfg)
    last = fits[-1]
    run.write_json("fit.json", {
        "analysis": cfg.analysis, "fit": last.to_dict(), "fits": [f.to_dict() for f in fits],
        "covariance": cov.to_dict(),
    })
    run.finish()
    _say(f"analysis {cfg.analysis}: gamma_hat={last.gamma_hat:.6g} eta_hat={last.eta_hat:.6g} "
         f"Z={cov.z_statistics[-1]:.4f}")
    return EXIT_OK


def cmd_design(cfg: RunConfig) -> int:
    run = Run(cfg, "design")
    d = cfg.design
    imax = harness.design_imax(d)
    info = np.asarray(d.planned_fractions()) * imax
    bnd = gst.canonical_boundaries(info, d.alpha, d.beta, d.eta_alt, imax, d.spending_exponent, K=d.K)
    run.write_rows("boundaries.csv", bnd.to_rows())
    run.finish({"imax": imax})
    _say(f"I_max={imax:.4f}; b={np.round(bnd.b, 4).tolist()} a={np.round(bnd.a, 4).tolist()}")
    return EXIT_OK


def cmd_oc(cfg: RunConfig) -> int:
    run = Run(cfg, "oc")
    t0 = time.perf_counter()
    oc = harness.operating_characteristics(cfg.params, cfg.design, cfg.method, cfg.replicates, cfg.seed,
                                           eta_true=cfg.eta_true, jobs=cfg.jobs)
    run.write_rows("oc.csv", [oc.to_row()])
    run.finish()
    _say(f"{cfg.method}: rejection {oc.rejection_rate:.4f} (SE {oc.rejection_se:.4f}), "
         f"failures {oc.failure_rate:.3f}, {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_samplesize(cfg: RunConfig) -> int:
    run = Run(cfg, "samplesize")
    res = harness.sample_size_search(
        cfg.params, cfg.design, cfg.method, cfg.target_power, cfg.bracket, cfg.replicates, cfg.seed,
        jobs=cfg.jobs, progress=lambda row: _say(f"  n={row['n']}: power {row['power']:.3f}"),
    )
    run.write_rows("samplesize_trace.csv", res.trace)
    run.write_json("samplesize.json", {"method": cfg.method, "target_power": cfg.target_power, **res.to_dict()})
    run.finish()
    _say(f"{cfg.method}: n* = {res.n_star} (power {res.achieved_power:.3f})")
    return EXIT_OK


def cmd_table(cfg: RunConfig) -> int:
    run = Run(cfg, "table")
    if cfg.table == "table1":
        cells = harness.table1(cfg.params, cfg.design, cfg.gamma_grid, cfg.sigma_sq_grid, cfg.table1_n, cfg.seed)
        rows = harness.table1_rows(cells)
    elif cfg.table == "table2":
        rows = []
        for s2 in cfg.sigma_sq_grid:
            for g in cfg.gamma_grid:
                p = cfg.params.replace(gamma=g, sigma_sq=s2)
                for m in METHODS:
                    oc = harness.operating_characteristics(p, cfg.design, m, cfg.replicates, cfg.seed,
                                                           eta_true=0.0, jobs=cfg.jobs)
                    rows.append(oc.to_row())
                    _say(f"  sigma_sq={s2} gamma={g} {m}: {oc.rejection_rate:.4f}")
    elif cfg.table == "table3":
        rows = []
        for s2 in cfg.sigma_sq_grid:
            for g in cfg.gamma_grid:
                p = cfg.params.replace(gamma=g, sigma_sq=s2)
                ns = {}
                for m in ("cox", "cscore-m1"):
                    res = harness.sample_size_search(p, cfg.design, m, cfg.target_power, cfg.bracket,
                                                     cfg.replicates, cfg.seed, jobs=cfg.jobs)
                    ns[m] = res.n_star
                re = harness.relative_efficiency(ns["cox"], ns["cscore-m1"])
                rows.append({"sigma_sq": s2, "gamma": g, "n_cox": ns["cox"], "n_joint": ns["cscore-m1"],
                             "relative_efficiency": re})
                _say(f"  sigma_sq={s2} gamma={g}: n_C={ns['cox']} n_J={ns['cscore-m1']} RE={re:.3f}")
    else:
        raise ValidationError(f"unknown table {cfg.table!r}")
    run.write_rows(f"{cfg.table}.csv", rows)
    run.finish()
    _say(f"wrote {run.out / (cfg.table + '.csv')}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, quick: bool = False) -> int:
    run = Run(cfg, "verify")
    results = verify.run_all(quick=quick)
    run.write_json("verify.json", {"checks": [
        {"name": r.name, "passed": bool(r.passed), "detail": r.detail} for r in results
    ]})
    run.finish()
    for r in results:
        _say(f"{'PASS' if r.passed else 'FAIL'} {r.name}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "fit":
            if args.analysis is not None and args.analysis > cfg.design.K:
                raise ValidationError(f"analysis {args.analysis} exceeds K={cfg.design.K}")
            return cmd_fit(cfg, args.visits, args.patients)
        if args.command == "design":
            return cmd_design(cfg)
        if args.command == "oc":
            return cmd_oc(cfg)
        if args.command == "samplesize":
            return cmd_samplesize(cfg)
        if args.command == "table":
            return cmd_table(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, quick=args.quick)
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except JmgstError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
