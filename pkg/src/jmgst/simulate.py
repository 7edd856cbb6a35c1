"""Trial simulation from the joint model and per-analysis data snapshots."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .params import JointModelParams, TrialDesign

# Independent child streams per random quantity keep draws for patient i
# identical whatever the trial size (common random numbers across n).
_STREAMS = ("arm", "entry", "b0", "b1", "noise", "event", "dropout")


@dataclass(frozen=True)
class PatientRecord:
    id: int
    z: int
    entry_time: float
    b0: float
    b1: float
    meas_times: np.ndarray
    meas_values: np.ndarray
    event_time: float
    dropout_time: float


@dataclass(frozen=True)
class Trial:
    """A complete simulated trial stored column-wise.

    ``W`` has one row per patient and one column per scheduled visit; visits at
    or after ``min(event_time, dropout_time)`` are NaN.
    """

    schedule: np.ndarray
    z: np.ndarray
    entry: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    W: np.ndarray
    event_time: np.ndarray
    dropout_time: np.ndarray
    max_followup: float = math.inf

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def n_meas(self) -> np.ndarray:
        return np.sum(~np.isnan(self.W), axis=1)

    def patient(self, i: int) -> PatientRecord:
        m = int(self.n_meas[i])
        return PatientRecord(
            id=i,
            z=int(self.z[i]),
            entry_time=float(self.entry[i]),
            b0=float(self.b0[i]),
            b1=float(self.b1[i]),
            meas_times=self.schedule[:m].copy(),
            meas_values=self.W[i, :m].copy(),
            event_time=float(self.event_time[i]),
            dropout_time=float(self.dropout_time[i]),
        )

    def patients(self) -> List[PatientRecord]:
        return [self.patient(i) for i in range(self.n)]


@dataclass(frozen=True)
class AnalysisSnapshot:
    """Observable data at one interim analysis (entered patients only)."""

    k: int
    calendar_time: float
    n_total: int
    schedule: np.ndarray
    ids: np.ndarray
    z: np.ndarray
    observed_time: np.ndarray
    event: np.ndarray
    W: np.ndarray
    n_meas: np.ndarray

    @property
    def eligible(self) -> np.ndarray:
        return self.n_meas >= 2

    @property
    def v2(self) -> np.ndarray:
        return np.where(self.eligible, self.schedule[1], np.inf)

    @property
    def n_entered(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


def inverse_cumhaz_time(E, b0, b1, z, params: JointModelParams):
    """Solve ``H(t) = E`` for the hazard ``h0 exp(gamma (b0 + b1 t) + eta z)``.

    Returns ``inf`` where the cumulative hazard is bounded below ``E``.
    """
    E = np.asarray(E, dtype=float)
    rate0 = params.h0 * np.exp(params.gamma * np.asarray(b0, float) + params.eta * np.asarray(z, float))
    c = params.gamma * np.asarray(b1, dtype=float)
    c, rate0, E = np.broadcast_arrays(c, rate0, E)
    # t = (E / rate0) * log1p(x) / x with x = E c / rate0; the ratio form stays
    # accurate as c -> 0 and reduces to the exponential case at c = 0.
    base = E / rate0
    x = base * c
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(np.abs(x) > 1e-12, np.log1p(np.maximum(x, -1.0)) / x, 1.0 - 0.5 * x)
    out = np.where(x > -1.0, base * ratio, np.inf)
    return out if out.ndim else float(out)


def simulate_event_time(b0, b1, z, params: JointModelParams, rng: np.random.Generator):
    """Draw event times by inverting the cumulative hazard at an Exp(1) draw."""
    E = rng.standard_exponential(np.shape(b0))
    return inverse_cumhaz_time(E, b0, b1, z, params)


def _dropout(rate: float, size, rng: np.random.Generator) -> np.ndarray:
    draws = rng.standard_exponential(size)
    if rate == 0:
        return np.full(size, np.inf)
    return draws / rate


def _patient_columns(params, design, z, streams, n):
    sched = np.asarray(design.measurement_schedule, dtype=float)
    entry = streams["entry"].uniform(0.0, design.accrual_duration, n)
    b0 = params.mu0 + math.sqrt(params.phi0_sq) * streams["b0"].standard_normal(n)
    b1 = params.mu1 + math.sqrt(params.phi1_sq) * streams["b1"].standard_normal(n)
    noise = math.sqrt(params.sigma_sq) * streams["noise"].standard_normal((n, len(sched)))
    event = inverse_cumhaz_time(streams["event"].standard_exponential(n), b0, b1, z, params)
    dropout = _dropout(params.censor_rate, n, streams["dropout"])
    W = b0[:, None] + b1[:, None] * sched[None, :] + noise
    stop = np.minimum(event, dropout)
    W[sched[None, :] >= stop[:, None]] = np.nan
    return entry, b0, b1, W, event, dropout


def _streams(seed) -> dict:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = [
        np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (j,))
        for j in range(len(_STREAMS))
    ]
    return {name: np.random.default_rng(child) for name, child in zip(_STREAMS, children)}


def allocate_arms(n: int, rng: np.random.Generator) -> np.ndarray:
    """1:1 allocation in randomly ordered blocks of two."""
    blocks = (n + 1) // 2
    first = (rng.random(blocks) < 0.5).astype(int)
    z = np.empty(2 * blocks, dtype=int)
    z[0::2] = first
    z[1::2] = 1 - first
    return z[:n]


def simulate_trial(params: JointModelParams, design: TrialDesign, seed) -> Trial:
    """Simulate ``design.n`` patients; ``seed`` is an int or a SeedSequence."""
    streams = _streams(seed)
    n = design.n
    z = allocate_arms(n, streams["arm"])
    entry, b0, b1, W, event, dropout = _patient_columns(params, design, z, streams, n)
    return Trial(
        schedule=np.asarray(design.measurement_schedule, dtype=float),
        z=z,
        entry=entry,
        b0=b0,
        b1=b1,
        W=W,
        event_time=event,
        dropout_time=dropout,
        max_followup=design.max_followup,
    )


def draw_patient(
    params: JointModelParams, design: TrialDesign, z: int, rng: np.random.Generator, id: int = 0
) -> PatientRecord:
    sched = np.asarray(design.measurement_schedule, dtype=float)
    entry = rng.uniform(0.0, design.accrual_duration)
    b0 = params.mu0 + math.sqrt(params.phi0_sq) * rng.standard_normal()
    b1 = params.mu1 + math.sqrt(params.phi1_sq) * rng.standard_normal()
    W = b0 + b1 * sched + math.sqrt(params.sigma_sq) * rng.standard_normal(len(sched))
    event = float(simulate_event_time(b0, b1, z, params, rng))
    dropout = float(_dropout(params.censor_rate, 1, rng)[0])
    keep = sched < min(event, dropout)
    return PatientRecord(
        id=id, z=int(z), entry_time=float(entry), b0=float(b0), b1=float(b1),
        meas_times=sched[keep], meas_values=W[keep], event_time=event, dropout_time=dropout,
    )


def trial_from_patients(patients: Sequence[PatientRecord], design: TrialDesign) -> Trial:
    sched = np.asarray(design.measurement_schedule, dtype=float)
    n = len(patients)
    W = np.full((n, len(sched)), np.nan)
    for i, p in enumerate(patients):
        m = len(p.meas_values)
        if not np.array_equal(np.asarray(p.meas_times), sched[:m]):
            raise ValidationError(f"patient {p.id}: measurement times must be a schedule prefix")
        W[i, :m] = p.meas_values
    col = lambda attr: np.array([getattr(p, attr) for p in patients], dtype=float)
    return Trial(
        schedule=sched, z=col("z").astype(int), entry=col("entry_time"), b0=col("b0"),
        b1=col("b1"), W=W, event_time=col("event_time"), dropout_time=col("dropout_time"),
        max_followup=design.max_followup,
    )


def snapshot(trial: Trial, k: int, design: TrialDesign, n_total: Optional[int] = None) -> AnalysisSnapshot:
    """Data visible at analysis ``k`` (0-based) held at ``design.analysis_times[k]``."""
    if not 0 <= k < design.K:
        raise IndexError(f"analysis index {k} out of range for K={design.K}")
    cal = design.analysis_times[k]
    return snapshot_at(trial, cal, k=k, n_total=n_total)


def snapshot_at(trial: Trial, calendar_time: float, k: int = 0, n_total: Optional[int] = None) -> AnalysisSnapshot:
    entered = np.flatnonzero(trial.entry <= calendar_time)
    admin = np.minimum(calendar_time - trial.entry[entered], trial.max_followup)
    F = trial.event_time[entered]
    cens = np.minimum(trial.dropout_time[entered], admin)
    t = np.minimum(F, cens)
    event = F <= cens
    W = trial.W[entered].copy()
    W[trial.schedule[None, :] >= t[:, None]] = np.nan
    n_meas = np.sum(~np.isnan(W), axis=1)
    return AnalysisSnapshot(
        k=k,
        calendar_time=float(calendar_time),
        n_total=trial.n if n_total is None else n_total,
        schedule=trial.schedule,
        ids=entered,
        z=trial.z[entered],
        observed_time=t,
        event=event,
        W=W,
        n_meas=n_meas,
    )


def snapshots(trial: Trial, design: TrialDesign) -> List[AnalysisSnapshot]:
    return [snapshot(trial, k, design) for k in range(design.K)]


# --- CSV interchange --------------------------------------------------------

VISIT_HEADER = ("patient_id", "visit", "time", "value")
PATIENT_HEADER = ("patient_id", "z", "entry_time", "b0", "b1", "event_time", "dropout_time", "n_meas")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trial_csv(
    trial: Trial, visits_path: str | Path, patients_path: str | Path, comment: Optional[str] = None
) -> None:
    """Write one row per patient-visit and one summary row per patient.

    Floats are written with ``repr`` so a reload reproduces them exactly.  An
    optional ``comment`` becomes a leading ``#`` line in both files.
    """
    with open(visits_path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(VISIT_HEADER)
        for i in range(trial.n):
            for j in np.flatnonzero(~np.isnan(trial.W[i])):
                w.writerow((i, int(j), _fmt(trial.schedule[j]), _fmt(trial.W[i, j])))
    with open(patients_path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(PATIENT_HEADER)
        n_meas = trial.n_meas
        for i in range(trial.n):
            w.writerow((
                i, int(trial.z[i]), _fmt(trial.entry[i]), _fmt(trial.b0[i]), _fmt(trial.b1[i]),
                _fmt(trial.event_time[i]), _fmt(trial.dropout_time[i]), int(n_meas[i]),
            ))


def _read_rows(path, header) -> Iterable[tuple]:
    with open(path, newline="") as fh:
        lines = iter(enumerate(fh, start=1))
        start = 1
        for start, line in lines:
            if not line.startswith("#"):
                break
        else:
            line = ""
        if tuple(next(csv.reader([line]), ())) != header:
            raise ValidationError(f"{path}: line {start}: expected header {','.join(header)}")
        reader = csv.reader(line for _, line in lines)
        for lineno, row in enumerate(reader, start=start + 1):
            if len(row) != len(header):
                raise ValidationError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                yield lineno, tuple(float(x) for x in row)
            except ValueError as exc:
                raise ValidationError(f"{path}: line {lineno}: {exc}") from exc


def read_trial_csv(visits_path, patients_path, design: TrialDesign) -> Trial:
    sched = np.asarray(design.measurement_schedule, dtype=float)
    rows = list(_read_rows(patients_path, PATIENT_HEADER))
    n = len(rows)
    cols = np.array([r for _, r in rows]).reshape(n, len(PATIENT_HEADER))
    for (lineno, r), i in zip(rows, range(n)):
        if int(r[0]) != i:
            raise ValidationError(f"{patients_path}: line {lineno}: patient ids must be 0..n-1 in order")
    W = np.full((n, len(sched)), np.nan)
    for lineno, (pid, visit, time, value) in _read_rows(visits_path, VISIT_HEADER):
        pid, visit = int(pid), int(visit)
        if not (0 <= pid < n and 0 <= visit < len(sched)) or time != sched[visit]:
            raise ValidationError(f"{visits_path}: line {lineno}: visit does not match the design schedule")
        W[pid, visit] = value
    return Trial(
        schedule=sched, z=cols[:, 1].astype(int), entry=cols[:, 2], b0=cols[:, 3], b1=cols[:, 4],
        W=W, event_time=cols[:, 5], dropout_time=cols[:, 6], max_followup=design.max_followup,
    )
