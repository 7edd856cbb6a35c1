import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from jmgst.errors import ValidationError
from jmgst.params import JointModelParams, TrialDesign
from jmgst.simulate import (
    PatientRecord, draw_patient, inverse_cumhaz_time, read_trial_csv, simulate_event_time, simulate_trial,
    snapshot, snapshots, trial_from_patients, write_trial_csv,
)


def test_exponential_inversion_by_hand():
    p = JointModelParams(gamma=0.0, eta=0.0, h0=5.5)
    assert inverse_cumhaz_time(5.5, 0.0, 0.0, 0, p) == pytest.approx(1.0)


def test_bounded_cumulative_hazard_gives_infinity():
    p = JointModelParams(gamma=0.1, eta=0.0, h0=0.02)
    b0, b1 = 1.0, -2.0
    total = p.h0 * math.exp(p.gamma * b0) / (-p.gamma * b1)
    assert math.isinf(inverse_cumhaz_time(total * 1.01, b0, b1, 0, p))
    assert math.isfinite(inverse_cumhaz_time(total * 0.99, b0, b1, 0, p))


@given(st.floats(1e-4, 5), st.floats(-0.1, 0.1), st.floats(-5, 15), st.floats(-2, 2), st.integers(0, 1))
@settings(max_examples=100, deadline=None)
def test_inversion_roundtrip(E, gamma, b0, b1, z):
    p = JointModelParams(gamma=gamma, eta=-0.5, h0=0.02)
    t = inverse_cumhaz_time(E, b0, b1, z, p)
    if math.isinf(t):
        assert gamma * b1 < 0
        return
    rate = p.h0 * math.exp(gamma * b0 - 0.5 * z)
    y = gamma * b1 * t
    H = rate * t * (math.expm1(y) / y if abs(y) > 1e-12 else 1.0)
    assert H == pytest.approx(E, rel=1e-8)


def test_exponential_law_when_unlinked():
    p = JointModelParams(gamma=0.0, eta=-0.5, h0=0.03)
    rng = np.random.default_rng(5)
    t = simulate_event_time(np.zeros(100_000), np.zeros(100_000), np.ones(100_000, int), p, rng)
    rate = p.h0 * math.exp(p.eta)
    assert stats.kstest(t, "expon", args=(0, 1 / rate)).pvalue > 0.01


def test_degenerate_patient_values(rng):
    p = JointModelParams(phi0_sq=0.0, phi1_sq=0.0, sigma_sq=0.0, censor_rate=0.0, h0=1e-9)
    d = TrialDesign(measurement_schedule=(0.0, 1.0))
    rec = draw_patient(p, d, 0, rng)
    np.testing.assert_allclose(rec.meas_values, [p.mu0, p.mu0 + p.mu1])
    assert math.isinf(rec.dropout_time)


def test_intercept_mean_matches_parameters():
    p = JointModelParams(gamma=0.03)
    trial = simulate_trial(p, TrialDesign(n=10_000), 8)
    assert abs(trial.b0.mean() - 6.0) < 3 * math.sqrt(12.25 / 10_000)


def _trial(entry, F, sched=(0.0, 3.0, 6.0, 9.0, 12.0), dropout=math.inf):
    d = TrialDesign(n=1, analysis_times=(20.0, 40.0), measurement_schedule=sched)
    rec = PatientRecord(id=0, z=1, entry_time=entry, b0=0.0, b1=0.0,
                        meas_times=np.array([s for s in sched if s < min(F, dropout)]),
                        meas_values=np.array([1.0 for s in sched if s < min(F, dropout)]),
                        event_time=F, dropout_time=dropout)
    return trial_from_patients([rec], d), d


def test_snapshot_minimum_rule():
    tr, d = _trial(10.0, 8.0)
    s = snapshot(tr, 0, d)
    assert s.observed_time[0] == 8.0 and s.event[0]
    tr, d = _trial(10.0, 15.0)
    s = snapshot(tr, 0, d)
    assert s.observed_time[0] == 10.0 and not s.event[0]
    tr, d = _trial(25.0, 15.0)
    assert len(snapshot(tr, 0, d)) == 0
    with pytest.raises(IndexError):
        snapshot(tr, 2, d)


def test_single_visit_before_event_is_ineligible():
    tr, d = _trial(0.0, 2.0)
    s = snapshot(tr, 0, d)
    assert s.n_meas[0] == 1 and not s.eligible[0]


def test_visit_at_event_time_is_dropped():
    tr, d = _trial(0.0, 6.0)
    assert snapshot(tr, 0, d).n_meas[0] == 2


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=15, deadline=None)
def test_snapshots_are_monotone(seed):
    d = TrialDesign(n=80)
    tr = simulate_trial(JointModelParams(gamma=0.05, sigma_sq=1.0), d, seed)
    snaps = snapshots(tr, d)
    for a, b in zip(snaps, snaps[1:]):
        pos = np.searchsorted(b.ids, a.ids)
        assert np.array_equal(b.ids[pos], a.ids)
        assert np.all(a.observed_time <= b.observed_time[pos] + 1e-12)
        assert np.all(b.event[pos][a.event])
        assert np.array_equal(b.observed_time[pos][a.event], a.observed_time[a.event])


def test_reproducible_and_common_across_n():
    p = JointModelParams(gamma=0.05, sigma_sq=1.0)
    a = simulate_trial(p, TrialDesign(n=50), 9)
    b = simulate_trial(p, TrialDesign(n=50), 9)
    for name in ("z", "entry", "b0", "b1", "event_time", "dropout_time"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_array_equal(a.W, b.W)
    c = simulate_trial(p, TrialDesign(n=80), 9)
    assert np.array_equal(a.b0, c.b0[:50]) and np.array_equal(a.event_time, c.event_time[:50])


def test_event_fraction_matches_competing_exponentials():
    # γ = 0 and unlimited follow-up: P(event before dropout) = h/(h + λ) per arm.
    p = JointModelParams(gamma=0.0, eta=-0.5, h0=0.02, censor_rate=0.022)
    d = TrialDesign(n=10_000, analysis_times=(1e6,))
    tr = simulate_trial(p, d, 3)
    s = snapshot(tr, 0, d)
    for z in (0, 1):
        h = p.h0 * math.exp(p.eta * z)
        expect = h / (h + p.censor_rate)
        got = s.event[s.z == z]
        assert abs(got.mean() - expect) < 3 * math.sqrt(expect * (1 - expect) / len(got))


def test_csv_roundtrip(tmp_path, small_trial, small_design):
    v, pt = tmp_path / "v.csv", tmp_path / "p.csv"
    write_trial_csv(small_trial, v, pt, comment="provenance")
    back = read_trial_csv(v, pt, small_design)
    np.testing.assert_array_equal(back.W, small_trial.W)
    for name in ("z", "entry", "b0", "b1", "event_time", "dropout_time"):
        assert np.array_equal(getattr(back, name), getattr(small_trial, name))


def test_malformed_csv_names_line(tmp_path, small_trial, small_design):
    v, pt = tmp_path / "v.csv", tmp_path / "p.csv"
    write_trial_csv(small_trial, v, pt)
    lines = v.read_text().splitlines()
    lines[4] = "1,2,not-a-number,3"
    v.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValidationError, match="line 5"):
        read_trial_csv(v, pt, small_design)
