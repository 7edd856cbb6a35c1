"""Model parameters, trial design and run configuration.

Times are in months throughout: recruitment window, analysis calendar times,
biomarker visit offsets and the hazard rates (per month).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .errors import ValidationError

# Calibrated defaults; see README "Calibration".  The reference slope
# mean/SD (3, 2.5) are read as per 6.5 months, so per month they are divided
# by SLOPE_TIME_SCALE.
SLOPE_TIME_SCALE = 6.5
DEFAULT_H0 = 0.014
# Baseline, two weeks, then monthly: the second visit opens the risk set early.
DEFAULT_SCHEDULE = (0.0, 0.5) + tuple(float(m) for m in range(1, 60))


def slope_params(mean: float = 3.0, sd: float = 2.5) -> dict:
    """Per-month ``mu1``/``phi1_sq`` from reference slope mean and SD."""
    return {"mu1": mean / SLOPE_TIME_SCALE, "phi1_sq": (sd / SLOPE_TIME_SCALE) ** 2}


@dataclass(frozen=True)
class JointModelParams:
    """Parameters of the joint longitudinal/time-to-event model.

    The biomarker is ``X(t) = b0 + b1 t`` with independent normal random
    effects, observed with additive normal error of variance ``sigma_sq``.
    The hazard is ``h0 * exp(gamma * X(t) + eta * z)``.
    """

    mu0: float = 6.0
    mu1: float = 3.0 / SLOPE_TIME_SCALE
    phi0_sq: float = 12.25
    phi1_sq: float = (2.5 / SLOPE_TIME_SCALE) ** 2
    sigma_sq: float = 10.0
    gamma: float = 0.03
    eta: float = -0.5
    h0: float = DEFAULT_H0
    censor_rate: float = 0.022

    def __post_init__(self) -> None:
        for name in ("phi0_sq", "phi1_sq", "sigma_sq", "censor_rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValidationError(f"{name} must be finite and >= 0, got {value}")
        if not (math.isfinite(self.h0) and self.h0 > 0):
            raise ValidationError(f"h0 must be > 0, got {self.h0}")
        for name in ("mu0", "mu1", "gamma", "eta"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")

    def replace(self, **changes: Any) -> "JointModelParams":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class TrialDesign:
    """Recruitment, follow-up, analysis timing and error-rate targets.

    ``information_fractions`` are the planned I_k / I_max used when solving
    for I_max; when omitted they are equally spaced.  ``spending_time``
    selects whether error is spent at those planned fractions or at the
    observed fractions ``I_k / I_max`` of each simulated trial.
    """

    n: int = 365
    accrual_duration: float = 24.0
    analysis_times: tuple = (20.0, 30.0, 40.0, 50.0, 60.0)
    max_followup: float = math.inf
    measurement_schedule: tuple = DEFAULT_SCHEDULE
    alpha: float = 0.025
    beta: float = 0.1
    spending_exponent: float = 2.0
    eta_alt: float = -0.5
    information_fractions: Optional[tuple] = None
    spending_time: str = "planned"

    def __post_init__(self) -> None:
        object.__setattr__(self, "analysis_times", tuple(float(t) for t in self.analysis_times))
        object.__setattr__(
            self, "measurement_schedule", tuple(float(t) for t in self.measurement_schedule)
        )
        if self.information_fractions is not None:
            object.__setattr__(
                self, "information_fractions", tuple(float(f) for f in self.information_fractions)
            )
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ValidationError(f"n must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not (self.accrual_duration >= 0 and math.isfinite(self.accrual_duration)):
            raise ValidationError("accrual_duration must be finite and >= 0")
        times = self.analysis_times
        if len(times) < 1:
            raise ValidationError("at least one analysis time is required")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("analysis_times must be strictly increasing")
        sched = self.measurement_schedule
        if len(sched) < 2:
            raise ValidationError("measurement_schedule needs at least 2 visits")
        if sched[0] != 0.0:
            raise ValidationError("measurement_schedule must start at 0")
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValidationError("measurement_schedule must be strictly increasing")
        if not self.max_followup > 0:
            raise ValidationError("max_followup must be > 0")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not 0 < self.beta < 1:
            raise ValidationError("beta must lie in (0, 1)")
        if not self.spending_exponent > 0:
            raise ValidationError("spending_exponent must be > 0")
        if self.eta_alt == 0 or not math.isfinite(self.eta_alt):
            raise ValidationError("eta_alt must be finite and nonzero")
        if self.spending_time not in ("planned", "observed"):
            raise ValidationError("spending_time must be 'planned' or 'observed'")
        fr = self.information_fractions
        if fr is not None:
            if len(fr) != len(times):
                raise ValidationError("information_fractions must have one entry per analysis")
            if any(b <= a for a, b in zip(fr, fr[1:])) or fr[0] <= 0 or abs(fr[-1] - 1) > 1e-12:
                raise ValidationError("information_fractions must increase from >0 to 1")

    @property
    def K(self) -> int:
        return len(self.analysis_times)

    def planned_fractions(self) -> tuple:
        if self.information_fractions is not None:
            return self.information_fractions
        return tuple((k + 1) / self.K for k in range(self.K))

    def replace(self, **changes: Any) -> "TrialDesign":
        return dataclasses.replace(self, **changes)


METHODS = ("cscore-m1", "cscore-m2", "cscore-m3", "cox")


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs; built from a JSON document."""

    params: JointModelParams = field(default_factory=JointModelParams)
    design: TrialDesign = field(default_factory=TrialDesign)
    method: str = "cscore-m1"
    replicates: int = 2000
    seed: int = 1
    out: str = "out"
    jobs: int = 1
    analysis: int = 1
    eta_true: Optional[float] = None
    target_power: float = 0.9
    bracket: tuple = (200, 800)
    table: str = "table1"
    gamma_grid: tuple = (0.0, 0.03, 0.06, 0.09)
    sigma_sq_grid: tuple = (0.0, 1.0, 10.0, 100.0)
    table1_n: int = 4800

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if not 0 < self.target_power < 1:
            raise ValidationError("target_power must lie in (0, 1)")
        if len(self.bracket) != 2 or not 0 < self.bracket[0] < self.bracket[1]:
            raise ValidationError("bracket must be two increasing positive sample sizes")
        if not 1 <= self.analysis <= self.design.K:
            raise ValidationError(f"analysis must lie in 1..{self.design.K}")

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def digest(self) -> str:
        """Hash of everything that affects results (output routing and worker count excluded)."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("out", "jobs")}
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _number(value: Any) -> Any:
    if isinstance(value, str) and value.lower() in ("inf", "infinity", "+inf"):
        return math.inf
    return value


def _build(cls: type, data: dict, where: str) -> Any:
    if not isinstance(data, dict):
        raise ValidationError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        value = _number(value)
        if isinstance(value, list):
            value = tuple(_number(v) for v in value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ValidationError("config must be a JSON object")
    data = dict(data)
    params = _build(JointModelParams, data.pop("params", {}), "params")
    design = _build(TrialDesign, data.pop("design", {}), "design")
    top = _build_top(data)
    return RunConfig(params=params, design=design, **top)


def _build_top(data: dict) -> dict:
    known = {f.name for f in dataclasses.fields(RunConfig)} - {"params", "design"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValidationError(f"unknown key(s) in config: {', '.join(unknown)}")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}


def load_config(path: str | Path) -> RunConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def params_from_dict(data: dict) -> JointModelParams:
    return _build(JointModelParams, data, "params")


def design_from_dict(data: dict) -> TrialDesign:
    return _build(TrialDesign, data, "design")


def default_config() -> RunConfig:
    return RunConfig()


def as_tuple(values: Sequence[float]) -> tuple:
    return tuple(float(v) for v in values)
