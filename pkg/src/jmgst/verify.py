"""Numerical self-checks: Jacobian vs finite differences, the sandwich identity,
the two-analysis correlation inequality and the three-analysis sweeps."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import cscore, gst
from .params import JointModelParams, TrialDesign
from .simulate import simulate_trial, snapshot
from .trajectory import sigma_sq_hat


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


def random_small_terms(rng: np.random.Generator, n: int = 60):
    """Event terms from a small simulated trial with randomly drawn parameters."""
    while True:
        p = JointModelParams(
            gamma=rng.uniform(-0.1, 0.1), eta=rng.uniform(-1, 1), sigma_sq=rng.uniform(0.5, 20),
            h0=rng.uniform(0.01, 0.05),
        )
        d = TrialDesign(n=n, measurement_schedule=tuple(float(t) for t in range(0, 60, 3)))
        trial = simulate_trial(p, d, int(rng.integers(2**31)))
        snap = snapshot(trial, d.K - 1, d)
        terms = cscore.assemble_event_terms(snap)
        if len(terms) >= 3:
            return p, terms


def jacobian_fd_check(n_datasets: int = 50, seed: int = 2024, step: float = 1e-5, rtol: float = 1e-4) -> CheckResult:
    """Analytic Jacobian against central differences of the score.

    The error of each entry is measured relative to the largest entry of its
    column, so near-zero entries do not inflate the comparison.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_datasets):
        p, terms = random_small_terms(rng)
        g, e, s2 = p.gamma + rng.normal(0, 0.02), p.eta + rng.normal(0, 0.2), p.sigma_sq
        J = cscore.jacobian(terms, g, e, s2)
        fd = np.column_stack([
            (cscore.score(terms, g + step, e, s2) - cscore.score(terms, g - step, e, s2)) / (2 * step),
            (cscore.score(terms, g, e + step, s2) - cscore.score(terms, g, e - step, s2)) / (2 * step),
        ])
        scale = np.maximum(np.abs(J).max(axis=0), 1e-300)
        worst = max(worst, float((np.abs(J - fd) / scale).max()))
    return CheckResult("jacobian_fd", worst < rtol, {"datasets": n_datasets, "max_rel_error": worst})


def identity_check(n_snapshots: int = 100, seed: int = 7, tol: float = 1e-10) -> CheckResult:
    """``[Â⁻¹B̂]_12 = 0`` and ``[Â⁻¹B̂]_22 = 1`` on simulated snapshots."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_snapshots):
        p = JointModelParams(gamma=rng.uniform(0, 0.09), eta=rng.uniform(-0.5, 0.0),
                             sigma_sq=float(rng.choice([1.0, 10.0, 100.0])))
        d = TrialDesign(n=int(rng.integers(150, 400)))
        trial = simulate_trial(p, d, int(rng.integers(2**31)))
        snap = snapshot(trial, int(rng.integers(d.K)), d)
        terms = cscore.assemble_event_terms(snap)
        A, B = cscore.sandwich_pieces(terms, p.gamma, p.eta, sigma_sq_hat(snap))
        M = np.linalg.solve(A, B)
        worst = max(worst, abs(M[0, 1]), abs(M[1, 1] - 1))
    return CheckResult("sandwich_identity", worst < tol, {"snapshots": n_snapshots, "max_abs_error": worst})


def theorem2_check_grid() -> CheckResult:
    rows = gst.theorem2_grid()
    bad = [r for r in rows if not r[-1]]
    return CheckResult("theorem2_grid", not bad, {"points": len(rows), "violations": len(bad)})


def k3_check(n_grid: int = 11, tol: float = 1e-9) -> CheckResult:
    detail = {}
    ok = True
    for name in gst.K3_SCENARIOS:
        _, rows = gst.k3_monotonicity(name, n_grid)
        feas = [row for row in rows if row[-1]]
        margin = min(row[4] - row[5] for row in feas)
        detail[name] = {"points": len(rows), "feasible": len(feas), "min_margin": margin}
        ok &= margin >= -tol
    return CheckResult("k3_sweeps", ok, detail)


def run_all(quick: bool = False) -> list:
    return [
        jacobian_fd_check(10 if quick else 50),
        identity_check(20 if quick else 100),
        theorem2_check_grid(),
        k3_check(6 if quick else 11),
    ]
