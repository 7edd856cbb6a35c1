import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jmgst.errors import DegenerateDesign, InsufficientData, NoDegreesOfFreedom
from jmgst.simulate import AnalysisSnapshot
from jmgst.trajectory import RunningOlsState, prefix_fits, sigma_sq_hat, theta, xhat


def state(t, w):
    return RunningOlsState.from_measurements(t, w)


def test_hand_computed_predictions():
    assert xhat(state([0, 2], [1, 3]), 2.0) == pytest.approx(3.0)
    assert xhat(state([0, 2], [5, 5]), 7.3) == pytest.approx(5.0)
    assert xhat(state([0, 1, 2], [0, 1, 0]), 2.0) == pytest.approx(1 / 3)


def test_hand_computed_theta():
    assert theta(state([0, 2], [1, 3]), 2.0) == pytest.approx(1.0)
    # evaluated for the two-visit fit at its mean time
    assert theta(state([0, 2], [1, 3]), 1.0, m=2) == pytest.approx(0.5)


def test_errors():
    with pytest.raises(InsufficientData):
        xhat(state([0], [1]), 1.0)
    with pytest.raises(DegenerateDesign):
        xhat(state([1, 1], [1, 2]), 1.0)


def test_theta_shrinks_with_more_visits():
    vals = [theta(state(np.linspace(0, 10, m), np.zeros(m)), 10.0) for m in (2, 4, 8, 16, 64, 256)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


times = st.lists(st.floats(0, 50, allow_nan=False), min_size=2, max_size=12, unique=True).map(sorted)


@given(times, st.data())
@settings(max_examples=60, deadline=None)
def test_prefix_causality(t, data):
    w = data.draw(st.lists(st.floats(-20, 20), min_size=len(t), max_size=len(t)))
    extra = data.draw(st.lists(st.floats(0.1, 10), min_size=1, max_size=4))
    u = t[-1]
    later = list(np.cumsum(extra) + u)
    a = state(t, w)
    b = state(t + later, w + [1e3] * len(later))
    if np.ptp(t) < 1e-6:
        return
    assert xhat(b, u) == pytest.approx(xhat(a, u), rel=1e-9, abs=1e-7)
    assert theta(b, u) == pytest.approx(theta(a, u), rel=1e-9)


@given(times, st.floats(-5, 5), st.floats(-2, 2), st.floats(0, 60))
@settings(max_examples=60, deadline=None)
def test_exact_line_and_theta_positive(t, b0, b1, u):
    if np.ptp(t) < 1e-3:
        return
    t = [x for x in t if x <= u] or None
    if t is None or len(t) < 2 or np.ptp(t) < 1e-3:
        return
    s = state(t, [b0 + b1 * x for x in t])
    assert xhat(s, u) == pytest.approx(b0 + b1 * u, abs=1e-6 * (1 + abs(b1) * 60))
    th = theta(s, u)
    assert th > 0
    assert theta(s, float(np.mean(t)), m=len(t)) <= th + 1e-12


def _snap(W, t_obs):
    W = np.asarray(W, float)
    n = W.shape[0]
    return AnalysisSnapshot(
        k=0, calendar_time=100.0, n_total=n, schedule=np.arange(W.shape[1], dtype=float), ids=np.arange(n),
        z=np.zeros(n, int), observed_time=np.asarray(t_obs, float), event=np.zeros(n, bool), W=W,
        n_meas=np.sum(~np.isnan(W), axis=1),
    )


def test_sigma_sq_hat_examples():
    assert sigma_sq_hat(_snap([[0, 1, 2]], [5])) == pytest.approx(0.0, abs=1e-12)
    assert sigma_sq_hat(_snap([[0, 1, 0]], [5])) == pytest.approx(2 / 3)
    with pytest.raises(NoDegreesOfFreedom):
        sigma_sq_hat(_snap([[0, 1, np.nan], [2, 2, np.nan]], [5, 5]))


def test_prefix_fits_match_scalar_path(rng):
    sched = np.arange(0, 30, 3.0)
    W = rng.normal(size=(6, len(sched)))
    W[2, 4:] = np.nan
    pf = prefix_fits(sched, W)
    rows = np.array([0, 2, 5])
    m = np.array([3, 4, 10])
    u = np.array([7.0, 10.0, 28.0])
    for r, mm, uu, got_x, got_t in zip(rows, m, u, pf.xhat(rows, m, u), pf.theta(m, u)):
        s = state(sched[:mm], W[r, :mm])
        assert got_x == pytest.approx(xhat(s, uu), rel=1e-10, abs=1e-12)
        assert got_t == pytest.approx(theta(s, uu), rel=1e-10)


def test_unbiasedness_and_variance_factor(rng):
    # Monte Carlo: X̂(u) − X(u) has mean 0 and variance σ²θ(u).
    sched = np.array([0.0, 1.0, 2.0, 3.0])
    sigma = 1.5
    reps = 100_000
    b0 = rng.normal(6, 3.5, reps)
    b1 = rng.normal(0.75, 0.6, reps)
    W = b0[:, None] + b1[:, None] * sched + sigma * rng.standard_normal((reps, 4))
    pf = prefix_fits(sched, W)
    u = 3.0
    rows = np.arange(reps)
    err = pf.xhat(rows, np.full(reps, 4), np.full(reps, u)) - (b0 + b1 * u)
    th = pf.theta(np.array([4]), np.array([u]))[0]
    assert abs(err.mean()) < 3 * err.std() / np.sqrt(reps)
    assert err.var() / (sigma**2 * th) == pytest.approx(1.0, rel=0.05)
    # σ̂² from four visits per patient is unbiased (within 2%)
    snap = _snap(W[:10_000], np.full(10_000, 10.0))
    assert sigma_sq_hat(snap) == pytest.approx(sigma**2, rel=0.02)
