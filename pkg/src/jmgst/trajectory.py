"""Per-patient running least-squares fits of the biomarker trajectory.

``X̂(u)`` and its variance factor ``θ(u)`` use only the measurements taken at
patient-times ``<= u``; later visits never leak into earlier predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDesign, InsufficientData, NoDegreesOfFreedom


@dataclass(frozen=True)
class RunningOlsState:
    """Accumulated moments for every measurement-count prefix of one patient.

    Entry ``m`` of each array describes the first ``m`` measurements
    (index 0 is the empty prefix).
    """

    times: np.ndarray
    values: np.ndarray
    m: np.ndarray
    sum_t: np.ndarray
    sum_t2: np.ndarray
    sum_w: np.ndarray
    sum_tw: np.ndarray
    sum_w2: np.ndarray

    @classmethod
    def from_measurements(cls, times, values) -> "RunningOlsState":
        t = np.asarray(times, dtype=float)
        w = np.asarray(values, dtype=float)
        if t.shape != w.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-D arrays of equal length")
        if np.any(np.diff(t) < 0):
            raise ValueError("measurement times must be sorted")
        acc = lambda x: np.concatenate(([0.0], np.cumsum(x)))
        return cls(
            times=t, values=w, m=np.arange(len(t) + 1), sum_t=acc(t), sum_t2=acc(t * t),
            sum_w=acc(w), sum_tw=acc(t * w), sum_w2=acc(w * w),
        )

    def count_at(self, u: float) -> int:
        """Number of measurements at patient-times ``<= u``."""
        return int(np.searchsorted(self.times, u, side="right"))

    def coefficients(self, m: int) -> tuple:
        """Intercept, slope, mean time and centred time sum of squares for prefix ``m``."""
        if m < 2:
            raise InsufficientData(f"need at least 2 measurements, have {m}")
        t = self.times[:m]
        tbar = t.mean()
        dt = t - tbar
        stt = float(dt @ dt)
        if stt <= 0:
            raise DegenerateDesign("all measurement times are equal")
        w = self.values[:m]
        slope = float(dt @ (w - w.mean())) / stt
        return float(w.mean() - slope * tbar), slope, float(tbar), stt

    def xhat(self, u: float, m: int | None = None) -> float:
        """Prediction at ``u`` from the first ``m`` visits (default: those at times ``<= u``)."""
        b0, b1, _, _ = self.coefficients(self.count_at(u) if m is None else m)
        return b0 + b1 * u

    def theta(self, u: float, m: int | None = None) -> float:
        """Prediction-variance factor ``1/m + (u − t̄)²/S_tt`` of the same fit."""
        m = self.count_at(u) if m is None else m
        _, _, tbar, stt = self.coefficients(m)
        return 1.0 / m + (u - tbar) ** 2 / stt

    def rss(self, m: int | None = None) -> float:
        """Residual sum of squares of the fit to the first ``m`` (default all) values."""
        m = len(self.times) if m is None else m
        b0, b1, _, _ = self.coefficients(m)
        r = self.values[:m] - b0 - b1 * self.times[:m]
        return float(r @ r)


def xhat(state: RunningOlsState, u: float, m: int | None = None) -> float:
    return state.xhat(u, m)


def theta(state: RunningOlsState, u: float, m: int | None = None) -> float:
    return state.theta(u, m)


@dataclass(frozen=True)
class PrefixFits:
    """Vectorised prefix fits for patients sharing one visit schedule.

    Arrays are indexed ``[patient, m]`` (``b0``, ``b1``) or ``[m]``
    (``tbar``, ``stt``) with ``m`` the prefix length; entries for
    ``m < 2`` are NaN.
    """

    schedule: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    tbar: np.ndarray
    stt: np.ndarray

    def xhat(self, rows: np.ndarray, m: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.b0[rows, m] + self.b1[rows, m] * u

    def theta(self, m: np.ndarray, u: np.ndarray) -> np.ndarray:
        return 1.0 / m + (u - self.tbar[m]) ** 2 / self.stt[m]


def prefix_fits(schedule, W) -> PrefixFits:
    """Least-squares fits to every visit prefix; NaN visits must be trailing."""
    s = np.asarray(schedule, dtype=float)
    W = np.asarray(W, dtype=float)
    n, M = W.shape
    b0 = np.full((n, M + 1), np.nan)
    b1 = np.full((n, M + 1), np.nan)
    tbar = np.full(M + 1, np.nan)
    stt = np.full(M + 1, np.nan)
    Wz = np.nan_to_num(W)
    for m in range(2, M + 1):
        t = s[:m]
        tbar[m] = t.mean()
        dt = t - tbar[m]
        stt[m] = dt @ dt
        wbar = Wz[:, :m].mean(axis=1)
        b1[:, m] = (Wz[:, :m] @ dt) / stt[m]
        b0[:, m] = wbar - b1[:, m] * tbar[m]
    return PrefixFits(schedule=s, b0=b0, b1=b1, tbar=tbar, stt=stt)


def sigma_sq_hat(snapshot) -> float:
    """Pooled residual variance over patients with more than two visible visits."""
    m = snapshot.n_meas
    use = m > 2
    if not np.any(use):
        raise NoDegreesOfFreedom("no patient has more than two measurements")
    s = snapshot.schedule
    W = snapshot.W[use]
    mu = m[use]
    rss = 0.0
    for mm in np.unique(mu):
        rows = W[mu == mm, :mm]
        t = s[:mm]
        dt = t - t.mean()
        resid = rows - rows.mean(axis=1, keepdims=True)
        slope = (resid @ dt) / (dt @ dt)
        r = resid - slope[:, None] * dt[None, :]
        rss += float(np.sum(r * r))
    return rss / float(np.sum(mu - 2))
