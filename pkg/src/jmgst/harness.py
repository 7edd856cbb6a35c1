"""Monte Carlo operating characteristics, sample-size search and table runs.

Replicate ``r`` of a run with seed ``s`` always draws from
``SeedSequence(s, spawn_key=(r,))``; results therefore do not depend on the
number of worker processes or on the order replicates finish in.  Because the
simulator draws patients in order from per-variable streams, the first ``n``
patients of a replicate are identical for every sample size, which gives
common random numbers across the probes of a sample-size search.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy

from . import __version__, cscore, gst
from .coxph import cox_fit
from .errors import BracketFailure, JmgstError, NumericalError
from .params import JointModelParams, TrialDesign
from .simulate import simulate_trial, snapshots

# Fit failures, non-PD covariances, etc. count as method failures.
_FAILURES = (NumericalError, np.linalg.LinAlgError)


def replicate_seed(seed: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(r,))


@dataclass
class ReplicateOutcome:
    decision: str
    stop_analysis: int
    enrolled: int
    reason: str = ""


@dataclass
class OperatingCharacteristics:
    method: str
    n: int
    replicates: int
    eta_true: float
    rejections: int
    failures: int
    rejection_rate: float
    rejection_se: float
    failure_rate: float
    expected_sample_size: float
    gamma: float
    sigma_sq: float
    phi1_sq: float

    def to_row(self) -> dict:
        return asdict(self)


def analyse_trial(trial, design: TrialDesign, method: str, imax: float, resolution: int = 24) -> ReplicateOutcome:
    """Sequentially analyse one simulated trial with the chosen method."""
    snaps = snapshots(trial, design)
    K = design.K
    planned = design.planned_fractions() if design.spending_time == "planned" else None
    fits = []
    z = []
    info = []
    a = b = None
    for k, snap in enumerate(snaps):
        try:
            if method == "cox":
                c = cox_fit(snap)
                info.append(c.information)
                z.append(-c.eta_hat * math.sqrt(c.information))
            else:
                init = (fits[-1].gamma_hat, fits[-1].eta_hat) if fits else (0.0, 0.0)
                try:
                    f = cscore.fit_snapshot(snap, init=init)
                except NumericalError:
                    if not fits:
                        raise
                    f = cscore.fit_snapshot(snap)
                fits.append(f)
                cov = cscore.cross_covariance(fits, n=snap.n_total)
                if method == "cscore-m1":
                    info.append(1.0 / cov.eta_variances[k])
                    z.append(float(cov.z_statistics[k]))
                elif method == "cscore-m3":
                    est, var, _ = gst.method3_combine(cov.eta_hat, cov.eta_cov)
                    info.append(1.0 / var)
                    z.append(-est / math.sqrt(var))
                elif method == "cscore-m2":
                    info.append(1.0 / cov.eta_variances[k])
                    z.append(float(cov.z_statistics[k]))
                else:
                    raise ValueError(f"unknown method {method!r}")
            if method == "cscore-m2":
                bnd = gst.method2_boundaries(cov.eta_cov, design.alpha, design.beta, design.eta_alt, imax,
                                             design.spending_exponent, K=K, upto=k + 1, fractions=planned)
            else:
                bnd = gst.canonical_boundaries(info, design.alpha, design.beta, design.eta_alt, imax,
                                               design.spending_exponent, K=K, resolution=resolution,
                                               fractions=planned)
            a, b = bnd.a, bnd.b
        except _FAILURES as exc:
            return ReplicateOutcome("failure", k + 1, snap.n_entered, type(exc).__name__)
        if not np.isfinite(z[k]):
            return ReplicateOutcome("failure", k + 1, snap.n_entered, "NonFiniteStatistic")
        if z[k] > b[k]:
            return ReplicateOutcome("reject", k + 1, snap.n_entered)
        if z[k] < a[k] or k == K - 1:
            return ReplicateOutcome("accept", k + 1, snap.n_entered)
    raise AssertionError("unreachable")


def _one_replicate(r: int, params, design, method, seed, imax, resolution) -> ReplicateOutcome:
    trial = simulate_trial(params, design, replicate_seed(seed, r))
    return analyse_trial(trial, design, method, imax, resolution)


def run_replicates(params, design, method, replicates, seed, imax, jobs=1, resolution=24,
                   start: int = 0) -> list:
    work = partial(_one_replicate, params=params, design=design, method=method, seed=seed, imax=imax,
                   resolution=resolution)
    idx = range(start, start + replicates)
    if jobs <= 1:
        return [work(r) for r in idx]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(work, idx, chunksize=max(1, replicates // (8 * jobs))))


def summarise(outcomes, method, n, params: JointModelParams) -> OperatingCharacteristics:
    reps = len(outcomes)
    fails = sum(o.decision == "failure" for o in outcomes)
    rej = sum(o.decision == "reject" for o in outcomes)
    eff = reps - fails
    p = rej / eff if eff else float("nan")
    se = math.sqrt(p * (1 - p) / eff) if eff else float("nan")
    ess = float(np.mean([o.enrolled for o in outcomes])) if reps else float("nan")
    return OperatingCharacteristics(
        method=method, n=n, replicates=reps, eta_true=params.eta, rejections=rej, failures=fails,
        rejection_rate=p, rejection_se=se, failure_rate=fails / reps, expected_sample_size=ess,
        gamma=params.gamma, sigma_sq=params.sigma_sq, phi1_sq=params.phi1_sq,
    )


def design_imax(design: TrialDesign, resolution: int = 24) -> float:
    return gst.imax_for_power(design.planned_fractions(), design.alpha, design.beta, design.eta_alt,
                              design.spending_exponent, resolution)


def operating_characteristics(
    params: JointModelParams, design: TrialDesign, method: str, replicates: int, seed: int,
    n: Optional[int] = None, eta_true: Optional[float] = None, jobs: int = 1, imax: Optional[float] = None,
) -> OperatingCharacteristics:
    """Rejection and failure rates over ``replicates`` simulated trials."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    design = design if n is None else design.replace(n=n)
    params = params if eta_true is None else params.replace(eta=eta_true)
    imax = design_imax(design) if imax is None else imax
    out = run_replicates(params, design, method, replicates, seed, imax, jobs)
    return summarise(out, method, design.n, params)


@dataclass
class SampleSizeResult:
    n_star: int
    achieved_power: float
    power_se: float
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def sample_size_search(
    params: JointModelParams, design: TrialDesign, method: str, target_power: float = 0.9,
    bracket: Sequence[int] = (200, 800), replicates: int = 1000, seed: int = 1, jobs: int = 1,
    tol: int = 4, progress: Optional[Callable[[dict], None]] = None,
) -> SampleSizeResult:
    """Smallest n whose simulated power reaches the target, by bisection.

    Every probe reuses the same replicate seeds (common random numbers); the
    alternative ``eta_alt`` of the design is the true effect.
    """
    params = params.replace(eta=design.eta_alt)
    imax = design_imax(design)
    trace = []

    def probe(n):
        oc = operating_characteristics(params, design, method, replicates, seed, n=n, jobs=jobs, imax=imax)
        row = {"n": n, "power": oc.rejection_rate, "se": oc.rejection_se, "failure_rate": oc.failure_rate}
        trace.append(row)
        if progress:
            progress(row)
        return oc

    lo, hi = int(bracket[0]), int(bracket[1])
    plo, phi = probe(lo), probe(hi)
    if not (plo.rejection_rate < target_power <= phi.rejection_rate):
        raise BracketFailure(
            f"power {plo.rejection_rate:.3f} at n={lo} and {phi.rejection_rate:.3f} at n={hi} "
            f"do not straddle {target_power}"
        )
    best = phi
    while hi - lo > tol:
        mid = (lo + hi) // 2
        oc = probe(mid)
        if oc.rejection_rate >= target_power:
            hi, best = mid, oc
        else:
            lo = mid
    return SampleSizeResult(n_star=hi, achieved_power=best.rejection_rate, power_se=best.rejection_se, trace=trace)


def relative_efficiency(n_cox: float, n_joint: float) -> float:
    if not (n_cox > 0 and n_joint > 0):
        raise ValueError("sample sizes must be positive")
    return n_cox / n_joint


@dataclass
class Table1Cell:
    gamma: float
    sigma_sq: float
    matrix: np.ndarray
    sigma_sq_hat: float
    n_events: int
    error: str = ""


def table1_cell(params: JointModelParams, design: TrialDesign, gamma: float, sigma_sq: float, n: int,
                seed: int) -> Table1Cell:
    """``Â⁻¹B̂`` at the first analysis with the true (γ, η = 0) plugged in."""
    from .simulate import snapshot
    from .trajectory import sigma_sq_hat

    p = params.replace(gamma=gamma, sigma_sq=sigma_sq, eta=0.0)
    d = design.replace(n=n)
    trial = simulate_trial(p, d, replicate_seed(seed, 0))
    snap = snapshot(trial, 0, d)
    try:
        s2 = sigma_sq_hat(snap)
        terms = cscore.assemble_event_terms(snap)
        A, B = cscore.sandwich_pieces(terms, gamma, 0.0, s2)
        M = np.linalg.solve(A, B)
        return Table1Cell(gamma, sigma_sq, M, s2, len(terms))
    except _FAILURES as exc:
        return Table1Cell(gamma, sigma_sq, np.full((2, 2), np.nan), float("nan"), 0, type(exc).__name__)


def table1(params, design, gammas=(0.0, 0.03, 0.06, 0.09), sigma_sqs=(0.0, 1.0, 10.0, 100.0), n: int = 4800,
           seed: int = 1, budget: Optional[float] = None) -> list:
    """Grid of first-analysis ``Â⁻¹B̂`` matrices; stops early once ``budget`` seconds pass."""
    t0 = time.perf_counter()
    cells = []
    for s2 in sigma_sqs:
        for g in gammas:
            if budget is not None and time.perf_counter() - t0 > budget:
                return cells
            cells.append(table1_cell(params, design, g, s2, n, seed))
    return cells


# --------------------------------------------------------------------------
# Output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_rows(path, rows: Sequence[dict], comment: Optional[str] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def table1_rows(cells) -> list:
    return [
        {"sigma_sq": c.sigma_sq, "gamma": c.gamma, "m11": c.matrix[0, 0], "m12": c.matrix[0, 1],
         "m21": c.matrix[1, 0], "m22": c.matrix[1, 1], "sigma_sq_hat": c.sigma_sq_hat, "n_events": c.n_events,
         "error": c.error}
        for c in cells
    ]


def write_manifest(path, config: dict, digest: str, seed: int, wall_time: Optional[float] = None,
                   extra: Optional[dict] = None) -> None:
    """Provenance record.  ``wall_time_s`` is the only field that varies between reruns."""
    doc = {
        "config": config,
        "config_digest": digest,
        "seed": seed,
        "versions": {"jmgst": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__},
        "wall_time_s": None if wall_time is None else round(wall_time, 3),
    }
    if extra:
        doc.update(extra)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
