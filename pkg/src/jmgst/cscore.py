"""Group-sequential conditional-score estimation of (gamma, eta).

At every observed, eligible event time the risk set is frozen into an
:class:`EventTerms` block.  Score and Jacobian evaluations are then pure array
reductions over those blocks, so a Newton solve never revisits the raw data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import EmptyRiskSet, MaxIterations, NotConverged, SingularJacobian
from .trajectory import PrefixFits, prefix_fits, sigma_sq_hat

EXPONENT_LIMIT = 700.0


def e0(S, theta, z, gamma, eta, sigma_sq):
    """Conditional-intensity weight ``exp(γS − γ²σ²θ/2 + ηz)`` with clamped exponent."""
    expo = gamma * np.asarray(S, float) - 0.5 * gamma**2 * sigma_sq * np.asarray(theta, float) + eta * np.asarray(z, float)
    out = np.exp(np.clip(expo, -EXPONENT_LIMIT, EXPONENT_LIMIT))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class EventTerm:
    """One event time with its full eligible risk set."""

    patient: int
    u: float
    ids: np.ndarray
    xhat: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    dN: np.ndarray


@dataclass(frozen=True)
class EventTerms:
    """All event terms of one analysis in flat (CSR) layout.

    Entries ``offsets[e]:offsets[e+1]`` of the flat arrays hold the risk set
    of event ``e``; ``n`` is the trial sample size used for normalisation.
    """

    n: int
    u: np.ndarray
    patient: np.ndarray
    offsets: np.ndarray
    ids: np.ndarray
    xhat: np.ndarray
    theta: np.ndarray
    z: np.ndarray
    dN: np.ndarray

    def __len__(self) -> int:
        return len(self.u)

    def __getitem__(self, e: int) -> EventTerm:
        sl = slice(self.offsets[e], self.offsets[e + 1])
        return EventTerm(
            patient=int(self.patient[e]), u=float(self.u[e]), ids=self.ids[sl],
            xhat=self.xhat[sl], theta=self.theta[sl], z=self.z[sl], dN=self.dN[sl],
        )

    @property
    def event_index(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.u)), np.diff(self.offsets))

    @classmethod
    def from_terms(cls, terms: Sequence[EventTerm], n: int) -> "EventTerms":
        sizes = [len(t.ids) for t in terms]
        cat = lambda a, dt=float: np.concatenate([getattr(t, a) for t in terms]).astype(dt) if terms else np.empty(0, dt)
        return cls(
            n=n, u=np.array([t.u for t in terms], float), patient=np.array([t.patient for t in terms], int),
            offsets=np.concatenate(([0], np.cumsum(sizes))).astype(int), ids=cat("ids", int),
            xhat=cat("xhat"), theta=cat("theta"), z=cat("z"), dN=cat("dN", bool),
        )


def assemble_event_terms(snapshot, fits: Optional[PrefixFits] = None) -> EventTerms:
    """Freeze risk sets at each observed event of an eligible patient.

    A patient is at risk at ``u`` when its observed time is ``>= u`` and at
    least two of its visible visits fall at patient-times ``<= u``.  Tied
    events each get their own term in patient-id order.
    """
    sched = snapshot.schedule
    if fits is None:
        fits = prefix_fits(sched, snapshot.W)
    t = snapshot.observed_time
    ids = snapshot.ids
    m_vis = snapshot.n_meas
    fail = np.flatnonzero(snapshot.event & (m_vis >= 2))
    fail = fail[np.lexsort((ids[fail], t[fail]))]
    elig = np.flatnonzero(m_vis >= 2)
    order = elig[np.argsort(-t[elig], kind="stable")]
    t_desc = t[order]
    u = t[fail]
    # Risk set of event e is the first L[e] patients in descending-time order.
    L = np.searchsorted(-t_desc, -u, side="right")
    count_u = np.searchsorted(sched, u, side="right")
    L = np.where(count_u >= 2, L, 0)
    offsets = np.concatenate(([0], np.cumsum(L))).astype(int)
    total = int(offsets[-1])
    ev = np.repeat(np.arange(len(u)), L)
    pos = np.arange(total) - offsets[:-1][ev]
    rows = order[pos]
    m = np.minimum(count_u[ev], m_vis[rows])
    uu = u[ev]
    return EventTerms(
        n=int(snapshot.n_total),
        u=u,
        patient=ids[fail],
        offsets=offsets,
        ids=ids[rows],
        xhat=fits.xhat(rows, m, uu),
        theta=fits.theta(m, uu),
        z=snapshot.z[rows].astype(float),
        dN=rows == fail[ev],
    )


@dataclass(frozen=True)
class ScoreFunctionValues:
    """The S/C/E/V family at one event time (each normalised by 1/n)."""

    S0: float
    S1: np.ndarray
    S2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    Ec: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray


def score_function_values(term: EventTerm, gamma, eta, sigma_sq, n: int) -> ScoreFunctionValues:
    """Direct per-subject evaluation for a single event term."""
    dN = term.dN.astype(float)
    S = term.xhat + gamma * sigma_sq * term.theta * dN
    w = e0(S, term.theta, term.z, gamma, eta, sigma_sq)
    vec = np.stack([S, term.z], axis=1)
    J = np.stack([S - term.xhat - gamma * sigma_sq * term.theta, np.zeros_like(S)], axis=1)
    S0 = w.sum() / n
    S1 = vec.T @ w / n
    S2 = (vec * w[:, None]).T @ vec / n
    C1 = J.T @ w / n
    C2 = (vec * w[:, None]).T @ J / n
    C3 = np.zeros((2, 2))
    C3[0, 0] = np.sum(sigma_sq * term.theta * dN * w) / n
    if S0 <= 0:
        raise EmptyRiskSet(f"empty risk set at u={term.u}")
    Ec = S1 / S0
    V1 = S2 / S0 - np.outer(S1, S1) / S0**2
    V2 = C2 / S0 - np.outer(S1, C1) / S0**2
    V3 = C3 / S0
    return ScoreFunctionValues(S0, S1, S2, C1, C2, C3, Ec, V1, V2, V3)


@dataclass
class _Sums:
    score: np.ndarray
    jac: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    V3: np.ndarray
    Gamma: np.ndarray
    suspect: bool


def _evaluate(terms: EventTerms, gamma: float, eta: float, sigma_sq: float) -> _Sums:
    if len(terms) == 0:
        raise EmptyRiskSet("no event terms")
    sizes = np.diff(terms.offsets)
    if np.any(sizes == 0):
        raise EmptyRiskSet("an event has an empty risk set")
    ev = terms.event_index
    E = len(terms)
    gs = gamma * sigma_sq
    dN = terms.dN
    S = terms.xhat + gs * terms.theta * dN
    expo = gamma * S - 0.5 * gamma * gs * terms.theta + eta * terms.z
    suspect = bool(np.any(np.abs(expo) > EXPONENT_LIMIT))
    shift = np.maximum.reduceat(expo, terms.offsets[:-1])
    w = np.exp(np.maximum(expo - shift[ev], -EXPONENT_LIMIT))
    z = terms.z
    Jv = gs * terms.theta * (dN - 1.0)
    sums = lambda x: np.bincount(ev, weights=x, minlength=E)
    S0 = sums(w)
    Sw, zw = S * w, z * w
    Ea = sums(Sw) / S0
    Eb = sums(zw) / S0
    V1aa = sums(S * Sw) / S0 - Ea * Ea
    V1ab = sums(S * zw) / S0 - Ea * Eb
    V1bb = sums(z * zw) / S0 - Eb * Eb
    C1 = sums(Jv * w) / S0
    V2a = sums(Jv * Sw) / S0 - Ea * C1
    V2b = sums(Jv * zw) / S0 - Eb * C1
    V3a = sums(sigma_sq * terms.theta * dN * w) / S0

    fail_pos = terms.offsets[:-1] + _fail_position(terms)
    Sf = S[fail_pos]
    zf = z[fail_pos]
    score = np.array([np.sum(Sf - Ea), np.sum(zf - Eb)])
    V1 = np.array([[V1aa.sum(), V1ab.sum()], [V1ab.sum(), V1bb.sum()]])
    V2 = np.array([[V2a.sum(), 0.0], [V2b.sum(), 0.0]])
    V3 = np.array([[V3a.sum(), 0.0], [0.0, 0.0]])
    Gamma = np.array([[sigma_sq * terms.theta[fail_pos].sum(), 0.0], [0.0, 0.0]])
    jac = Gamma - V1 - V2 - V3
    return _Sums(score, jac, V1, V2, V3, Gamma, suspect)


def _fail_position(terms: EventTerms) -> np.ndarray:
    # Position of the failing subject inside each risk-set block.
    idx = np.flatnonzero(terms.dN)
    ev = terms.event_index[idx]
    pos = np.empty(len(terms), dtype=int)
    pos[ev] = idx - terms.offsets[:-1][ev]
    return pos


def score(terms: EventTerms, gamma: float, eta: float, sigma_sq: float) -> np.ndarray:
    """Conditional score vector ``U_c`` summed over event terms."""
    return _evaluate(terms, gamma, eta, sigma_sq).score


def jacobian(terms: EventTerms, gamma: float, eta: float, sigma_sq: float) -> np.ndarray:
    """Analytic ``∂U_c / ∂(γ, η)`` = Σ_events [Γ − V1 − V2 − V3]."""
    return _evaluate(terms, gamma, eta, sigma_sq).jac


def sandwich_pieces(terms: EventTerms, gamma: float, eta: float, sigma_sq: float):
    """``(A, B)`` normalised by the trial size at the given parameter values.

    ``A = (1/n) Σ [V1 + V2 − Γ]`` (the negated derivative without the
    asymptotically negligible V3 term) and ``B = (1/n) Σ V1``.
    """
    s = _evaluate(terms, gamma, eta, sigma_sq)
    n = terms.n
    return (s.V1 + s.V2 - s.Gamma) / n, s.V1 / n


@dataclass
class ConditionalScoreFit:
    gamma_hat: float
    eta_hat: float
    sigma_sq_hat: float
    A_hat: np.ndarray
    B_hat: np.ndarray
    score_norm: float
    iterations: int
    converged: bool
    n: int
    n_events: int
    suspect: bool = False

    @property
    def sandwich(self) -> np.ndarray:
        Ainv = np.linalg.inv(self.A_hat)
        return Ainv @ self.B_hat @ Ainv.T

    @property
    def eta_variance(self) -> float:
        return float(self.sandwich[1, 1] / self.n)

    def to_dict(self) -> dict:
        return {
            "gamma_hat": self.gamma_hat, "eta_hat": self.eta_hat, "sigma_sq_hat": self.sigma_sq_hat,
            "A_hat": self.A_hat.tolist(), "B_hat": self.B_hat.tolist(), "score_norm": self.score_norm,
            "iterations": self.iterations, "converged": self.converged, "n": self.n,
            "n_events": self.n_events, "suspect": self.suspect,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalScoreFit":
        d = dict(d)
        d["A_hat"] = np.array(d["A_hat"])
        d["B_hat"] = np.array(d["B_hat"])
        return cls(**d)


def solve(
    terms: EventTerms,
    sigma_sq: float,
    init: Sequence[float] = (0.0, 0.0),
    max_iter: int = 50,
    tol: Optional[float] = None,
) -> ConditionalScoreFit:
    """Damped Newton solve of ``U_c(γ, η) = 0`` with ``σ²`` held fixed."""
    if len(terms) == 0:
        raise EmptyRiskSet("cannot fit with zero events")
    tol = 1e-8 * (1 + len(terms)) if tol is None else tol
    x = np.asarray(init, dtype=float).copy()
    cur = _evaluate(terms, x[0], x[1], sigma_sq)
    suspect = cur.suspect
    it = 0
    while np.max(np.abs(cur.score)) > tol:
        if it >= max_iter:
            raise MaxIterations(f"no convergence in {max_iter} iterations")
        it += 1
        try:
            if not np.all(np.isfinite(cur.jac)) or abs(np.linalg.det(cur.jac)) < 1e-300:
                raise np.linalg.LinAlgError
            step = -np.linalg.solve(cur.jac, cur.score)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian("singular Jacobian") from exc
        norm0 = np.linalg.norm(cur.score)
        t = 1.0
        for _ in range(40):
            trial = x + t * step
            new = _evaluate(terms, trial[0], trial[1], sigma_sq)
            if np.all(np.isfinite(new.score)) and np.linalg.norm(new.score) < norm0:
                break
            t *= 0.5
        else:
            raise NotConverged("line search failed to reduce the score")
        x, cur = trial, new
        suspect |= cur.suspect
    A, B = sandwich_pieces(terms, x[0], x[1], sigma_sq)
    return ConditionalScoreFit(
        gamma_hat=float(x[0]), eta_hat=float(x[1]), sigma_sq_hat=float(sigma_sq), A_hat=A, B_hat=B,
        score_norm=float(np.max(np.abs(cur.score))), iterations=it, converged=True,
        n=terms.n, n_events=len(terms), suspect=suspect,
    )


def fit_snapshot(snapshot, init=(0.0, 0.0), sigma_sq: Optional[float] = None) -> ConditionalScoreFit:
    """Estimate σ² from the snapshot (unless given) and solve the score."""
    s2 = sigma_sq_hat(snapshot) if sigma_sq is None else sigma_sq
    terms = assemble_event_terms(snapshot)
    return solve(terms, s2, init=init)


@dataclass
class CrossAnalysisCovariance:
    """Sandwich covariance of the stacked estimates across analyses.

    ``blocks[k1][k2]`` is ``Σ̂_{k1k2} / n`` (a 2×2 matrix) for zero-based
    analysis indices.
    """

    blocks: list
    eta_cov: np.ndarray
    eta_hat: np.ndarray
    n: int

    @property
    def K(self) -> int:
        return len(self.eta_hat)

    @property
    def eta_variances(self) -> np.ndarray:
        return np.diag(self.eta_cov).copy()

    @property
    def information(self) -> np.ndarray:
        return 1.0 / self.eta_variances

    @property
    def z_statistics(self) -> np.ndarray:
        # Efficacy (η < 0) is an upper crossing.
        return -self.eta_hat * np.sqrt(self.information)

    @property
    def correlation(self) -> np.ndarray:
        d = np.sqrt(self.eta_variances)
        return self.eta_cov / np.outer(d, d)

    def rho(self) -> dict:
        c = self.correlation
        return {(i, j): float(c[i, j]) for i in range(self.K) for j in range(i + 1, self.K)}

    def rho_star(self) -> dict:
        v = self.eta_variances
        return {(i, j): float(np.sqrt(v[j] / v[i])) for i in range(self.K) for j in range(i + 1, self.K)}

    def to_dict(self) -> dict:
        return {
            "n": self.n, "eta_hat": self.eta_hat.tolist(), "eta_cov": self.eta_cov.tolist(),
            "blocks": [[b.tolist() for b in row] for row in self.blocks],
            "information": self.information.tolist(), "z": self.z_statistics.tolist(),
        }


def cross_covariance(fits: Sequence[ConditionalScoreFit], n: Optional[int] = None) -> CrossAnalysisCovariance:
    """Σ̂_{k1k2} = Â_{k1}⁻¹ B̂_{k1} Â_{k2}⁻ᵀ for k1 ≤ k2, each divided by n."""
    for k, f in enumerate(fits):
        if not f.converged:
            raise NotConverged(f"fit at analysis {k + 1} did not converge")
    n = fits[0].n if n is None else n
    K = len(fits)
    Ainv = [np.linalg.inv(f.A_hat) for f in fits]
    blocks: list = [[None] * K for _ in range(K)]
    for i in range(K):
        left = Ainv[i] @ fits[i].B_hat
        for j in range(i, K):
            blk = left @ Ainv[j].T / n
            blocks[i][j] = blk
            blocks[j][i] = blk.T
    eta_cov = np.array([[blocks[i][j][1, 1] for j in range(K)] for i in range(K)])
    eta_hat = np.array([f.eta_hat for f in fits])
    return CrossAnalysisCovariance(blocks=blocks, eta_cov=eta_cov, eta_hat=eta_hat, n=n)
