"""Treatment-only Cox partial likelihood (Breslow ties), ignoring biomarker data."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import MaxIterations, MonotoneLikelihood, NoEvents


@dataclass
class CoxFit:
    eta_hat: float
    information: float
    iterations: int
    converged: bool
    n_events: int

    @property
    def variance(self) -> float:
        return 1.0 / self.information

    def to_dict(self) -> dict:
        return asdict(self)


def _risk_sums(time, event, z):
    """Per distinct event time: event count, treated-event count and risk-set membership."""
    order = np.argsort(-time, kind="stable")
    t, d, zz = time[order], event[order], z[order]
    uniq, first = np.unique(-t, return_index=True)
    # ``first`` marks the start of each tie block in descending order; a risk
    # set at time u is every row up to the end of its block.
    ends = np.append(first[1:], len(t))
    n_risk = ends
    z_risk = np.cumsum(zz)[ends - 1]
    d_cnt = np.add.reduceat(d.astype(float), first)
    dz = np.add.reduceat((d * zz).astype(float), first)
    keep = d_cnt > 0
    return d_cnt[keep], dz[keep], n_risk[keep].astype(float), z_risk[keep]


def _score_info(eta, d, dz, n_risk, z_risk):
    # With binary z: S0 = (n−m) + m e^η, S1 = m e^η, p = S1/S0.
    w = np.exp(eta)
    p = z_risk * w / (n_risk - z_risk + z_risk * w)
    return float(np.sum(dz - d * p)), float(np.sum(d * p * (1 - p)))


def cox_score(time, event, z, eta: float) -> float:
    """Partial-likelihood score in η for a binary covariate."""
    d, dz, nr, zr = _risk_sums(np.asarray(time, float), np.asarray(event, bool), np.asarray(z, float))
    return _score_info(eta, d, dz, nr, zr)[0]


def cox_fit_arrays(time, event, z, max_iter: int = 50, tol: float = 1e-10) -> CoxFit:
    time = np.asarray(time, float)
    event = np.asarray(event, bool)
    z = np.asarray(z, float)
    if not np.any(event):
        raise NoEvents("no observed events")
    ez = z[event]
    if np.all(ez == ez[0]):
        raise MonotoneLikelihood("all events fall in one arm")
    d, dz, nr, zr = _risk_sums(time, event, z)
    # U(η) is decreasing; a finite root exists only if it changes sign.
    u_hi = float(np.sum(dz - d * (zr > 0)))
    u_lo = float(np.sum(dz - d * (zr == nr)))
    if u_hi >= -1e-12 or u_lo <= 1e-12:
        raise MonotoneLikelihood("partial likelihood has no finite maximiser")
    eta = 0.0
    for it in range(1, max_iter + 1):
        u, info = _score_info(eta, d, dz, nr, zr)
        step = u / info
        # Cap the step; the log-likelihood is concave so this only slows divergence.
        step = float(np.clip(step, -2.0, 2.0))
        eta += step
        if abs(step) < tol:
            break
    else:
        raise MaxIterations("Cox Newton did not converge")
    _, info = _score_info(eta, d, dz, nr, zr)
    if not info > 0:
        raise MonotoneLikelihood("zero partial-likelihood information")
    return CoxFit(eta_hat=eta, information=info, iterations=it, converged=True, n_events=int(event.sum()))


def cox_fit(snapshot, **kw) -> CoxFit:
    """Fit η_C on every entered patient of an analysis snapshot."""
    return cox_fit_arrays(snapshot.observed_time, snapshot.event, snapshot.z, **kw)
