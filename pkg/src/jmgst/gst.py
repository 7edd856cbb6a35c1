"""Error-spending group-sequential boundaries and decision rules.

Three constructions are provided:

* canonical boundaries from the independent-increments recursion (method 1),
* boundaries from the full estimated correlation matrix by randomized QMC
  multivariate-normal rectangle probabilities (method 2),
* the minimum-variance recombination of the per-analysis estimates, which is
  then monitored with canonical boundaries (method 3).

Z statistics are oriented so that efficacy is an upper crossing; under the
alternative ``eta_alt < 0`` the drift of ``Z_k`` is ``-eta_alt * sqrt(I_k)``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special, stats
from scipy.stats import qmc

from .errors import (
    BracketFailure,
    ConditionViolated,
    NegativeVariance,
    NonIncreasingInformation,
    NotPositiveDefinite,
    SingularCovariance,
)

_norm = stats.norm


def spend(level: float, fraction: float, exponent: float = 2.0) -> float:
    """Power-family cumulative error spent: ``min(level * fraction**exponent, level)``."""
    if fraction <= 0:
        return 0.0
    return float(min(level * fraction**exponent, level))


@dataclass
class SpendingPlan:
    """Cumulative and incremental α/β spending at the given information fractions.

    The last fraction closes the design: whatever α and β remain are spent
    there when ``final`` is set.
    """

    alpha: float
    beta: float
    exponent: float
    fractions: np.ndarray
    final: bool = True
    cum_alpha: np.ndarray = field(init=False)
    cum_beta: np.ndarray = field(init=False)

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, float)
        ca = np.array([spend(self.alpha, f, self.exponent) for f in self.fractions])
        cb = np.array([spend(self.beta, f, self.exponent) for f in self.fractions])
        if self.final and len(ca):
            ca[-1], cb[-1] = self.alpha, self.beta
        self.cum_alpha = np.maximum.accumulate(ca) if len(ca) else ca
        self.cum_beta = np.maximum.accumulate(cb) if len(cb) else cb

    @property
    def inc_alpha(self) -> np.ndarray:
        return np.diff(self.cum_alpha, prepend=0.0)

    @property
    def inc_beta(self) -> np.ndarray:
        return np.diff(self.cum_beta, prepend=0.0)


@dataclass
class GstBoundaries:
    a: np.ndarray
    b: np.ndarray
    info: np.ndarray
    imax: float
    method: str
    cum_alpha: np.ndarray
    cum_beta: np.ndarray

    @property
    def K(self) -> int:
        return len(self.b)

    def to_rows(self) -> list:
        return [
            {"k": k + 1, "I_k": float(self.info[k]), "a_k": float(self.a[k]), "b_k": float(self.b[k]),
             "spent_alpha": float(self.cum_alpha[k]), "spent_beta": float(self.cum_beta[k])}
            for k in range(self.K)
        ]

    def write_csv(self, path, header_comment: Optional[str] = None) -> None:
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.DictWriter(fh, fieldnames=["k", "I_k", "a_k", "b_k", "spent_alpha", "spent_beta"])
            w.writeheader()
            for row in self.to_rows():
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# --------------------------------------------------------------------------
# Canonical recursion


def _simpson(lo: float, hi: float, h: float):
    n = max(2, int(math.ceil((hi - lo) / h)))
    n += n % 2
    x = np.linspace(lo, hi, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (hi - lo) / (3 * n)


class CanonicalRecursion:
    """Sub-density propagation for ``Z_k`` with ``Cov(S_j, S_k) = I_min(j,k)``.

    Parameters
    ----------
    info : increasing information levels.
    drift : mean of ``Z_k`` is ``drift * sqrt(I_k)``; a sequence gives one
        value per analysis (an effect that changes over time).
    resolution : grid points per unit standard deviation.
    """

    def __init__(self, info, drift: float = 0.0, resolution: int = 24, width: float = 8.5):
        self.info = np.asarray(info, float)
        if np.any(self.info <= 0) or np.any(np.diff(self.info) <= 0):
            raise NonIncreasingInformation(f"information must be positive and increasing: {self.info}")
        self.theta = np.broadcast_to(np.asarray(drift, float), self.info.shape).copy()
        self.h = 1.0 / resolution
        self.width = width
        self.k = 0
        self._x = None  # grid of the current continuation region (previous stage)
        self._g = None  # sub-density times quadrature weight

    def _cond(self, k):
        Ip, Ik = self.info[k - 1], self.info[k]
        d = Ik - Ip
        step = self.theta[k] * Ik - self.theta[k - 1] * Ip
        mean = (self._x * math.sqrt(Ip) + step) / math.sqrt(Ik)
        return mean, math.sqrt(d / Ik)

    def upper_tail(self, b: float) -> float:
        """P(continue through k-1, Z_k > b) for the current stage k."""
        k = self.k
        if k == 0:
            return float(_norm.sf(b - self.theta[0] * math.sqrt(self.info[0])))
        if self._x is None or len(self._x) == 0:
            return 0.0
        mean, sd = self._cond(k)
        return float(self._g @ _norm.sf((b - mean) / sd))

    def lower_tail(self, a: float) -> float:
        k = self.k
        if k == 0:
            return float(_norm.cdf(a - self.theta[0] * math.sqrt(self.info[0])))
        if self._x is None or len(self._x) == 0:
            return 0.0
        mean, sd = self._cond(k)
        return float(self._g @ _norm.cdf((a - mean) / sd))

    def advance(self, a: float, b: float) -> None:
        """Restrict stage k to the continuation region (a, b) and move to k+1."""
        k = self.k
        m = self.theta[k] * math.sqrt(self.info[k])
        lo, hi = max(a, m - self.width), min(b, m + self.width)
        if hi <= lo:
            self._x, self._g = np.empty(0), np.empty(0)
        else:
            x, w = _simpson(lo, hi, self.h)
            if k == 0:
                dens = _norm.pdf(x - m)
            elif len(self._x) == 0:
                dens = np.zeros_like(x)
            else:
                mean, sd = self._cond(k)
                dens = _norm.pdf((x[:, None] - mean[None, :]) / sd) @ self._g / sd
            self._x, self._g = x, dens * w
        self.k += 1


def _solve_tail(fn, target: float, lo: float = -12.0, hi: float = 40.0) -> float:
    # fn is decreasing in its argument.
    if target <= 0:
        return math.inf
    if fn(lo) <= target:
        return -math.inf
    if fn(hi) >= target:
        return hi
    return optimize.brentq(lambda x: fn(x) - target, lo, hi, xtol=1e-10, rtol=1e-12)


def _solve_lower(fn, target: float, lo: float = -40.0, hi: float = 12.0) -> float:
    # fn is increasing in its argument.
    if target <= 0:
        return -math.inf
    if fn(hi) <= target:
        return hi
    return optimize.brentq(lambda x: fn(x) - target, lo, hi, xtol=1e-10, rtol=1e-12)


def canonical_boundaries(
    info_levels: Sequence[float],
    alpha: float,
    beta: float,
    eta_alt: float,
    imax: float,
    exponent: float = 2.0,
    K: Optional[int] = None,
    resolution: int = 24,
    method: str = "canonical",
    fractions: Optional[Sequence[float]] = None,
) -> GstBoundaries:
    """Error-spending efficacy and (non-binding) futility boundaries.

    ``K`` is the planned number of analyses; when ``len(info_levels) == K``
    the last analysis spends all remaining α and β and ``a_K = b_K``.
    Error is spent at ``info_levels / imax`` unless explicit ``fractions``
    are given.
    """
    info = np.asarray(info_levels, float)
    K = len(info) if K is None else K
    final = len(info) == K
    fr = info / imax if fractions is None else np.asarray(fractions, float)[: len(info)]
    plan = SpendingPlan(alpha, beta, exponent, fr, final=final)
    up = CanonicalRecursion(info, 0.0, resolution)
    b = np.empty(len(info))
    for k in range(len(info)):
        b[k] = _solve_tail(up.upper_tail, plan.inc_alpha[k])
        up.advance(-math.inf, b[k])
    a = _futility(info, b, plan, -eta_alt, resolution, final)
    return GstBoundaries(a=a, b=b, info=info, imax=imax, method=method, cum_alpha=plan.cum_alpha, cum_beta=plan.cum_beta)


def _futility(info, b, plan, drift, resolution, final):
    alt = CanonicalRecursion(info, drift, resolution)
    a = np.empty(len(info))
    for k in range(len(info)):
        if final and k == len(info) - 1:
            a[k] = b[k]
            break
        ak = _solve_lower(alt.lower_tail, plan.inc_beta[k])
        a[k] = min(ak, b[k])
        alt.advance(a[k], b[k])
    return a


def crossing_probabilities(bounds: GstBoundaries, drift: float, resolution: int = 24, use_futility: bool = True):
    """Per-analysis upper and lower crossing probabilities under the canonical model."""
    rec = CanonicalRecursion(bounds.info, drift, resolution)
    up = np.empty(bounds.K)
    lo = np.empty(bounds.K)
    for k in range(bounds.K):
        a = bounds.a[k] if use_futility else -math.inf
        up[k] = rec.upper_tail(bounds.b[k])
        lo[k] = rec.lower_tail(a) if np.isfinite(a) else 0.0
        rec.advance(a, bounds.b[k])
    return up, lo


def power(imax: float, fractions, alpha, beta, eta_alt, exponent=2.0, resolution=24) -> float:
    info = np.asarray(fractions, float) * imax
    bnd = canonical_boundaries(info, alpha, beta, eta_alt, imax, exponent, resolution=resolution)
    up, _ = crossing_probabilities(bnd, -eta_alt, resolution)
    return float(up.sum())


def imax_for_power(
    fractions, alpha: float = 0.025, beta: float = 0.1, eta_alt: float = -0.5, exponent: float = 2.0,
    resolution: int = 24, tol: float = 1e-7,
) -> float:
    """Maximum information giving power ``1 − β`` at ``eta_alt`` (bisection)."""
    fractions = np.asarray(fractions, float)
    target = 1.0 - beta
    fixed = ((_norm.isf(alpha) + _norm.isf(beta)) / eta_alt) ** 2
    lo, hi = 0.5 * fixed, 3.0 * fixed
    f = lambda i: power(i, fractions, alpha, beta, eta_alt, exponent, resolution) - target
    flo, fhi = f(lo), f(hi)
    if flo > 0 or fhi < 0:
        raise BracketFailure(f"power bracket [{lo:.3g}, {hi:.3g}] does not straddle {target}")
    return float(optimize.brentq(f, lo, hi, xtol=tol * fixed))


def design_boundaries(design, resolution: int = 24) -> GstBoundaries:
    """Planned boundaries for a :class:`~jmgst.params.TrialDesign`."""
    fr = np.asarray(design.planned_fractions(), float)
    imax = imax_for_power(fr, design.alpha, design.beta, design.eta_alt, design.spending_exponent, resolution)
    return canonical_boundaries(fr * imax, design.alpha, design.beta, design.eta_alt, imax,
                                design.spending_exponent, resolution=resolution)


# --------------------------------------------------------------------------
# Multivariate normal rectangle probabilities


def _cholesky_psd(cov: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower Cholesky factor that tolerates exact singularity (zero pivots)."""
    cov = np.asarray(cov, float)
    d = len(cov)
    L = np.zeros_like(cov)
    for i in range(d):
        for j in range(i + 1):
            s = cov[i, j] - L[i, :j] @ L[j, :j]
            if i == j:
                scale = max(cov[i, i], 1.0) * tol
                if s < -1e3 * scale or not np.isfinite(s):
                    raise NotPositiveDefinite("covariance is not positive semi-definite")
                L[i, i] = math.sqrt(s) if s > scale else 0.0
            elif L[j, j] > 0:
                L[i, j] = s / L[j, j]
            elif abs(s) > 1e-8 * math.sqrt(max(cov[i, i] * cov[j, j], 1e-300)):
                raise NotPositiveDefinite("covariance is not positive semi-definite")
    return L


@dataclass
class MvnResult:
    value: float
    error: float
    n_points: int


class _GenzSampler:
    """Separation-of-variables integrand over the first ``d − 1`` coordinates.

    After conditioning on fixed randomized-QMC points the last coordinate is
    integrated in closed form, so probabilities as a function of the last
    limit are smooth and cheap to evaluate repeatedly.
    """

    def __init__(self, L, lower, upper, n, n_random, seed):
        d = len(L)
        self.L = L
        self.shape = (n_random, n)
        self.weight = np.ones(self.shape)
        self.shift = np.zeros(self.shape)  # Σ_j L[d-1, j] y_j
        if d == 1:
            return
        ss = np.random.SeedSequence(seed)
        ys = np.zeros(self.shape + (d - 1,))
        for r, child in enumerate(ss.spawn(n_random)):
            u = qmc.Sobol(d - 1, scramble=True, seed=np.random.default_rng(child)).random(n)
            for i in range(d - 1):
                c = ys[r, :, :i] @ L[i, :i]
                if L[i, i] > 0:
                    lo = _norm.cdf((lower[i] - c) / L[i, i])
                    hi = _norm.cdf((upper[i] - c) / L[i, i])
                    e = np.clip(hi - lo, 0.0, 1.0)
                    self.weight[r] *= e
                    p = np.clip(lo + u[:, i] * e, 1e-300, 1 - 1e-16)
                    ys[r, :, i] = _norm.ppf(p)
                else:
                    self.weight[r] *= (c > lower[i]) & (c <= upper[i])
                    ys[r, :, i] = 0.0
        self.shift = ys @ L[d - 1, : d - 1]

    def last(self, lo: float, hi: float):
        """Per-randomization estimates of P(..., lo < X_d <= hi)."""
        Ldd = self.L[-1, -1]
        if Ldd > 0:
            p = _norm.cdf((hi - self.shift) / Ldd) - _norm.cdf((lo - self.shift) / Ldd)
        else:
            p = ((self.shift > lo) & (self.shift <= hi)).astype(float)
        return (self.weight * p).mean(axis=1)


def _estimate(per_rand):
    r = len(per_rand)
    return float(per_rand.mean()), float(per_rand.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0


def mvn_rect_prob(
    cov, lower, upper, accuracy: float = 5e-5, seed: int = 20240601, n_random: int = 8,
    n_start: int = 1024, n_max: int = 1 << 17,
) -> MvnResult:
    """P(lower < X <= upper) for X ~ N(0, cov) by randomized-QMC (Genz).

    The Sobol sample doubles until the standard error across ``n_random``
    independent scramblings is at most ``accuracy`` (or ``n_max`` is hit).
    """
    cov = np.atleast_2d(np.asarray(cov, float))
    lower = np.broadcast_to(np.asarray(lower, float), (len(cov),)).copy()
    upper = np.broadcast_to(np.asarray(upper, float), (len(cov),)).copy()
    L = _cholesky_psd(cov)
    if len(cov) == 1:
        s = math.sqrt(cov[0, 0])
        v = float(_norm.cdf(upper[0] / s) - _norm.cdf(lower[0] / s)) if s > 0 else float(lower[0] < 0 <= upper[0])
        return MvnResult(v, 0.0, 0)
    n = n_start
    while True:
        est, err = _estimate(_GenzSampler(L, lower, upper, n, n_random, seed).last(lower[-1], upper[-1]))
        if err <= accuracy or n >= n_max:
            return MvnResult(est, err, n * n_random)
        n *= 2


def _corr(cov):
    d = np.sqrt(np.diag(cov))
    if np.any(~(d > 0)):
        raise NotPositiveDefinite("non-positive variance on the diagonal")
    return cov / np.outer(d, d)


def method2_boundaries(
    eta_cov, alpha: float, beta: float, eta_alt: float, imax: float, exponent: float = 2.0,
    K: Optional[int] = None, upto: Optional[int] = None, accuracy: float = 5e-5, seed: int = 20240601,
    n_random: int = 8, n_points: int = 2048, fractions: Optional[Sequence[float]] = None,
) -> GstBoundaries:
    """Boundaries from the full estimated covariance of ``η̂_1, …, η̂_K``.

    Each ``b_k`` solves ``P(Z_1 ≤ b_1, …, Z_{k−1} ≤ b_{k−1}, Z_k > b_k)`` equal
    to the α increment, using the correlation of the leading ``k×k`` block.
    Raises :class:`NotPositiveDefinite` at the first analysis whose leading
    block is not positive definite.
    """
    cov = np.asarray(eta_cov, float)
    K = len(cov) if K is None else K
    upto = len(cov) if upto is None else upto
    info = 1.0 / np.diag(cov)[:upto]
    final = upto == K
    fr = info / imax if fractions is None else np.asarray(fractions, float)[:upto]
    plan = SpendingPlan(alpha, beta, exponent, fr, final=final)
    b = np.empty(upto)
    a = np.empty(upto)
    drift = -eta_alt
    for k in range(upto):
        sub = cov[: k + 1, : k + 1]
        try:
            np.linalg.cholesky(sub)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"covariance of the first {k + 1} estimates is not positive definite", k) from exc
        R = _corr(sub)
        L = np.linalg.cholesky(R)
        inc = plan.inc_alpha[k]
        if k == 0:
            b[0] = _norm.isf(inc) if inc > 0 else math.inf
        else:
            s = _GenzSampler(L, np.full(k + 1, -np.inf), np.r_[b[:k], np.inf], n_points, n_random, seed + k)
            b[k] = _solve_tail(lambda x: s.last(x, np.inf).mean(), inc)
        mu = drift * np.sqrt(info[: k + 1])
        if final and k == upto - 1:
            a[k] = b[k]
            continue
        incb = plan.inc_beta[k]
        if k == 0:
            ak = mu[0] + _norm.ppf(incb) if incb > 0 else -math.inf
        else:
            s = _GenzSampler(L, a[:k] - mu[:k], b[:k] - mu[:k], n_points, n_random, seed + 1000 + k)
            ak = _solve_lower(lambda x: s.last(-np.inf, x - mu[k]).mean(), incb)
        a[k] = min(ak, b[k])
    return GstBoundaries(a=a, b=b, info=info, imax=imax, method="method2", cum_alpha=plan.cum_alpha, cum_beta=plan.cum_beta)


def method3_combine(eta_hats, cov):
    """Minimum-variance unbiased linear combination of correlated estimates.

    Returns ``(estimate, variance, weights)`` with ``w = Σ⁻¹1 / (1ᵀΣ⁻¹1)``.
    """
    eta_hats = np.atleast_1d(np.asarray(eta_hats, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    one = np.ones(len(eta_hats))
    try:
        if np.linalg.cond(cov) > 1e14:
            raise np.linalg.LinAlgError
        x = np.linalg.solve(cov, one)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance of the estimates is singular") from exc
    denom = float(one @ x)
    if not denom > 0:
        raise NegativeVariance(f"combined estimate has non-positive variance 1/{denom:.3g}")
    w = x / denom
    return float(w @ eta_hats), 1.0 / denom, w


# --------------------------------------------------------------------------
# Decisions


@dataclass
class TrialResult:
    stop_analysis: int
    decision: str  # "reject", "accept" or "failure"
    z: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def rejected(self) -> bool:
        return self.decision == "reject"


def run_trial(z, a, b, failure_at: Optional[int] = None) -> TrialResult:
    """Follow the first boundary crossing; analyses are 1-based in the result.

    ``failure_at`` (zero-based) marks the first analysis where boundaries
    could not be built; reaching it ends the trial as a method failure.
    """
    z = np.asarray(z, float)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    K = len(z) if failure_at is None else max(len(z), failure_at + 1)
    for k in range(K):
        if failure_at is not None and k == failure_at:
            return TrialResult(k + 1, "failure", z, a, b)
        if z[k] > b[k]:
            return TrialResult(k + 1, "reject", z, a, b)
        if z[k] < a[k]:
            return TrialResult(k + 1, "accept", z, a, b)
    return TrialResult(len(z), "accept", z, a, b)


# --------------------------------------------------------------------------
# Inequality verifiers


def bvn_upper(b1: float, b2: float, rho: float) -> float:
    """P(X1 > b1, X2 > b2) for a standard bivariate normal via Owen's T."""
    if rho >= 1.0:
        return float(_norm.sf(max(b1, b2)))
    if rho <= -1.0:
        return float(max(0.0, _norm.sf(b1) - _norm.cdf(b2)))
    # sub-1e-12 limits move the probability by < 1e-12 but underflow Owen's T
    h, k = (0.0 if abs(v) < 1e-12 else float(v) for v in (b1, b2))
    if h == 0 and k == 0:
        return 0.25 + math.asin(rho) / (2 * math.pi)
    s = math.sqrt((1 - rho) * (1 + rho))

    def t_term(x, y):
        if x == 0:
            return 0.25 * np.sign(y) if y != 0 else 0.0
        return special.owens_t(x, (y - rho * x) / (x * s))

    corr = 0.0 if (h * k > 0 or (h * k == 0 and h + k >= 0)) else 0.5
    return float(0.5 * (_norm.sf(h) + _norm.sf(k)) - t_term(h, k) - t_term(k, h) - corr)


def bvn_upper_quad(b1: float, b2: float, rho: float) -> float:
    """Same probability by one-dimensional quadrature (independent oracle)."""
    if rho >= 1.0:
        return float(_norm.sf(max(b1, b2)))
    s = math.sqrt(1 - rho * rho)
    val, _ = integrate.quad(lambda x: _norm.pdf(x) * _norm.sf((b2 - rho * x) / s), b1, np.inf, epsabs=1e-13, epsrel=1e-11)
    return float(val)


@dataclass
class Theorem2Result:
    p_star: float
    p: float
    holds: bool


def theorem2_check(rho: float, rho_star: float, b1: float, b2: float, accuracy: float = 1e-10) -> Theorem2Result:
    """Compare joint upper-crossing probabilities under ``rho_star`` and ``rho``."""
    if not (0 <= rho_star <= rho <= 1):
        raise ConditionViolated(f"need 0 <= rho_star <= rho <= 1, got rho_star={rho_star}, rho={rho}")
    if not (b1 >= b2 >= 0):
        raise ConditionViolated(f"need b1 >= b2 >= 0, got b1={b1}, b2={b2}")
    ps, p = bvn_upper(b1, b2, rho_star), bvn_upper(b1, b2, rho)
    return Theorem2Result(ps, p, ps <= p + accuracy)


def theorem2_grid(step_rho: float = 0.1, step_b: float = 0.25, b_max: float = 3.0):
    """Evaluate the inequality on every grid point satisfying the preconditions."""
    rhos = np.round(np.arange(0, 1 + 1e-9, step_rho), 10)
    bs = np.round(np.arange(0, b_max + 1e-9, step_b), 10)
    out = []
    for r in rhos:
        for rs in rhos[rhos <= r]:
            for b1 in bs:
                for b2 in bs[bs <= b1]:
                    res = theorem2_check(r, rs, b1, b2)
                    out.append((r, rs, b1, b2, res.p_star, res.p, res.holds))
    return out


def tvn_upper(b, R) -> float:
    """P(X1 > b1, X2 > b2, X3 > b3) for a standard trivariate normal.

    Integrates the conditional bivariate probability over ``x1``.
    """
    b = np.asarray(b, float)
    r12, r13, r23 = R[0, 1], R[0, 2], R[1, 2]
    s2, s3 = math.sqrt(max(1 - r12**2, 0.0)), math.sqrt(max(1 - r13**2, 0.0))
    if s2 == 0 or s3 == 0:
        raise ConditionViolated("degenerate trivariate correlation")
    rc = (r23 - r12 * r13) / (s2 * s3)
    if abs(rc) > 1 + 1e-12:
        raise ConditionViolated("correlation matrix is not positive semi-definite")
    rc = float(np.clip(rc, -1.0, 1.0))

    def integrand(x):
        return _norm.pdf(x) * bvn_upper((b[1] - r12 * x) / s2, (b[2] - r13 * x) / s3, rc)

    val, _ = integrate.quad(integrand, b[0], b[0] + 12, epsabs=1e-12, epsrel=1e-10, limit=200)
    return float(val)


K3_SCENARIOS = {
    "equal": ((1 / 3, 2 / 3, 1.0), 1.2),
    "front-loaded": ((0.5, 0.8, 1.0), 1.1),
    "back-loaded": ((0.2, 0.5, 1.0), 1.3),
}


@dataclass
class K3Scenario:
    name: str
    fractions: tuple
    divisor: float
    rho_star: dict
    rho: dict
    b: np.ndarray


def k3_scenario(name: str, alpha: float = 0.025, exponent: float = 2.0) -> K3Scenario:
    """Reconstructed three-analysis scenario: ρ* from fractions, ρ = ρ*·divisor (≤ 1)."""
    if name not in K3_SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(K3_SCENARIOS)}")
    fr, div = K3_SCENARIOS[name]
    pairs = [(0, 1), (0, 2), (1, 2)]
    rs = {p: math.sqrt(fr[p[0]] / fr[p[1]]) for p in pairs}
    rho = {}
    for p, v in rs.items():
        if v * div > 1:
            warnings.warn(f"rho{p[0] + 1}{p[1] + 1} clamped to 1 in scenario {name}")
        rho[p] = min(v * div, 1.0)
    bnd = canonical_boundaries(np.array(fr), alpha, 0.1, -0.5, 1.0, exponent)
    return K3Scenario(name, fr, div, rs, rho, bnd.b)


def _R(r12, r13, r23):
    return np.array([[1, r12, r13], [r12, 1, r23], [r13, r23, 1.0]])


def k3_monotonicity(name: str, n_grid: int = 11):
    """Four-step sweep: rows of (step, value, f_component, g, f_gain, g_gain, feasible).

    Step 2 sweeps ρ12 with (ρ13, ρ23) at ρ; step 3 sweeps ρ13 with ρ12 = ρ*12;
    step 4 sweeps ρ23 with ρ12, ρ13 at ρ*.  Gains are measured from the ρ*
    end of each sweep, so the inequality holds when ``g_gain <= f_gain``.
    Grid points whose correlation matrix is not positive semi-definite are
    not valid trivariate normals; they are kept with ``feasible=False`` and
    NaN probabilities.
    """
    sc = k3_scenario(name)
    b = sc.b
    rs, r = sc.rho_star, sc.rho
    steps = [
        ("rho12", (0, 1), lambda x: _R(x, r[(0, 2)], r[(1, 2)])),
        ("rho13", (0, 2), lambda x: _R(rs[(0, 1)], x, r[(1, 2)])),
        ("rho23", (1, 2), lambda x: _R(rs[(0, 1)], rs[(0, 2)], x)),
    ]
    rows = []
    for label, (i, j), build in steps:
        grid = np.linspace(rs[(i, j)], r[(i, j)], n_grid)
        f0 = g0 = None
        for x in grid:
            R = build(x)
            f = bvn_upper(b[i], b[j], x)
            if np.linalg.eigvalsh(R)[0] < -1e-12:
                rows.append((label, float(x), f, math.nan, math.nan, math.nan, False))
                continue
            g = tvn_upper(b, R)
            if f0 is None:
                f0, g0 = f, g
            rows.append((label, float(x), f, g, f - f0, g - g0, True))
    return sc, rows
