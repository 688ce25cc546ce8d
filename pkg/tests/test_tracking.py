import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gesturekit.tracking import (
    KalmanModel,
    KalmanState,
    TraceWriter,
    Tracker,
    TrackingError,
    constant_velocity_model,
    init_state,
    kf_predict,
    kf_update,
    map_to_screen,
    simulate_track,
    smoothness_report,
    track_sequence,
)


def scalar_model(q=0.0, r=1.0):
    return KalmanModel(A=np.eye(1), B=np.zeros((1, 1)), H=np.eye(1), Q=np.eye(1) * q, R=np.eye(1) * r)


def random_spd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T + n * np.eye(n))


# --- predict ----------------------------------------------------------------------------------


def test_identity_predict_is_noop():
    m = KalmanModel(A=np.eye(4), B=np.zeros((4, 1)), H=np.eye(2, 4), Q=np.zeros((4, 4)), R=np.eye(2))
    P = np.diag([1.0, 2, 3, 4])
    s = kf_predict(KalmanState(np.array([1.0, 2, 3, 4]), P), m)
    assert np.array_equal(s.x, [1, 2, 3, 4]) and np.array_equal(s.P, P)


def test_constant_velocity_step():
    s = kf_predict(KalmanState(np.array([0.0, 0, 1, 2]), np.eye(4)), constant_velocity_model())
    assert np.allclose(s.x, [1, 2, 1, 2])


def test_predict_matches_dense_oracle(rng):
    for _ in range(20):
        A = rng.normal(size=(4, 4))
        B = rng.normal(size=(4, 2))
        Q = random_spd(rng, 4, 0.1)
        m = KalmanModel(A=A, B=B, H=np.eye(2, 4), Q=Q, R=np.eye(2))
        x, u, P = rng.normal(size=4), rng.normal(size=2), random_spd(rng, 4)
        s = kf_predict(KalmanState(x, P, u=u), m)
        xe = [sum(A[i, j] * x[j] for j in range(4)) + sum(B[i, j] * u[j] for j in range(2))
              for i in range(4)]
        Pe = [[sum(A[i, a] * P[a, b] * A[j, b] for a in range(4) for b in range(4)) + Q[i, j]
               for j in range(4)] for i in range(4)]
        assert np.allclose(s.x, xe) and np.allclose(s.P, Pe)
        assert s.t == 1


def test_predict_dimension_mismatch():
    with pytest.raises(TrackingError):
        kf_predict(KalmanState(np.zeros(3), np.eye(3)), constant_velocity_model())


def test_model_validation():
    with pytest.raises(TrackingError, match="symmetric"):
        KalmanModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.array([[1.0, 1], [0, 1]]), np.eye(2))
    with pytest.raises(TrackingError, match="semidefinite"):
        KalmanModel(np.eye(2), np.zeros((2, 1)), np.eye(2), -np.eye(2), np.eye(2))
    with pytest.raises(TrackingError):
        KalmanModel(np.eye(2), np.zeros((2, 1)), np.eye(3), np.eye(2), np.eye(3))


# --- update -----------------------------------------------------------------------------------


def test_scalar_hand_computation():
    s = kf_update(KalmanState(np.array([0.0]), np.eye(1)), scalar_model(), [2.0])
    assert s.x[0] == pytest.approx(1.0)
    assert s.P[0, 0] == pytest.approx(0.5)


def test_perfect_measurement_pins_position():
    m = constant_velocity_model(r=1e-12)
    s = kf_update(KalmanState(np.array([5.0, 5, 0, 0]), np.eye(4) * 100), m, [10.0, -3.0])
    assert np.allclose(s.x[:2], [10, -3], atol=1e-6)


def test_uninformative_measurement_changes_nothing():
    m = constant_velocity_model(r=1e12)
    s = kf_update(KalmanState(np.array([5.0, 5, 1, 1]), np.eye(4)), m, [1000.0, -1000.0])
    assert np.allclose(s.x, [5, 5, 1, 1], atol=1e-6)


def test_update_matches_textbook_oracle(rng):
    m = constant_velocity_model(q=0.3, r=2.5)
    for joseph in (True, False):
        x, P, z = rng.normal(size=4), random_spd(rng, 4), rng.normal(size=2)
        s = kf_update(KalmanState(x, P), m, z, joseph=joseph)
        S = m.H @ P @ m.H.T + m.R
        K = P @ m.H.T @ np.linalg.inv(S)
        assert np.allclose(s.x, x + K @ (z - m.H @ x))
        assert np.allclose(s.P, (np.eye(4) - K @ m.H) @ P)


def test_singular_innovation_is_reported():
    m = KalmanModel(np.eye(2), np.zeros((2, 1)), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(TrackingError, match="singular"):
        kf_update(KalmanState(np.zeros(2), np.zeros((2, 2))), m, [1.0, 1.0])


def test_update_dimension_mismatch():
    with pytest.raises(TrackingError):
        kf_update(init_state([0, 0]), constant_velocity_model(), [1.0, 2.0, 3.0])


def test_covariance_stays_psd_over_many_cycles():
    rng = np.random.default_rng(5)
    m = constant_velocity_model()
    s = init_state([0.0, 0.0])
    worst = 0.0
    for _ in range(10_000):
        s = kf_predict(s, m)
        if rng.random() < 0.8:
            s = kf_update(s, m, rng.normal(0, 50, size=2))
        assert np.allclose(s.P, s.P.T)
        worst = min(worst, np.linalg.eigvalsh(s.P).min())
    assert worst >= -1e-9
    assert np.isfinite(s.x).all()


# --- sequences ----------------------------------------------------------------------------------


def test_noiseless_track_converges():
    truth = [(10 + 3 * t, 20 - 2 * t) for t in range(30)]
    s = track_sequence(truth)[-1]
    assert math.dist(s.x[:2], truth[-1]) < 0.5


def test_gap_coasts_on_the_line():
    truth = [(10 + 3 * t, 20 - 2 * t) for t in range(40)]
    obs = list(truth)
    for t in (30, 31, 32):
        obs[t] = None
    states = track_sequence(obs)
    v = states[29].x[2:]
    for k, t in enumerate((30, 31, 32), start=1):
        assert states[t].coasting
        assert np.allclose(states[t].x[:2], states[29].x[:2] + k * v)
    assert not states[33].coasting


def test_output_starts_at_first_detection_and_all_missing_raises():
    states = track_sequence([None, None, (1.0, 1.0), (2.0, 2.0)])
    assert len(states) == 2 and states[0].t == 2
    with pytest.raises(TrackingError):
        track_sequence([None, None])


def test_long_gap_reinitialises():
    obs = [(float(t), 0.0) for t in range(10)] + [None] * 11 + [(500.0, 500.0)]
    last = track_sequence(obs, max_coast=10)[-1]
    assert np.array_equal(last.x, [500, 500, 0, 0]) and last.missed == 0


def test_tracker_matches_track_sequence():
    _, obs = simulate_track(50, 5.0, np.random.default_rng(2), dropout=0.2)
    tr = Tracker()
    stepped = [tr.step(c, i) for i, c in enumerate(obs)]
    batch = track_sequence(obs)
    assert all(np.array_equal(a.x, b.x) for a, b in zip(stepped, batch))


def _rms(a, b):
    return float(np.sqrt(np.mean(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=1))))


def test_monte_carlo_rms_and_jump_reduction():
    ratios = []
    for seed in range(100):
        truth, obs = simulate_track(200, 8.0, np.random.default_rng(seed))
        est = [s.x[:2] for s in track_sequence(obs)]
        ratios.append(_rms(est, truth) / _rms(obs, truth))
        raw_rep, smooth_rep = smoothness_report(obs, est)
        assert smooth_rep.max_jump < raw_rep.max_jump
    assert np.mean(ratios) <= 0.7


def test_innovation_mean_near_zero():
    truth, obs = simulate_track(1000, 8.0, np.random.default_rng(11))
    m = constant_velocity_model()
    s = init_state(obs[0])
    innov = []
    for z in obs[1:]:
        s = kf_predict(s, m)
        innov.append(np.asarray(z) - m.H @ s.x)
        s = kf_update(s, m, z)
    assert np.abs(np.mean(innov, axis=0)).max() < 0.5


def test_matched_filter_never_diverges():
    sigma = 8.0
    for seed in range(20):
        truth, obs = simulate_track(300, sigma, np.random.default_rng(seed))
        states = track_sequence(obs, constant_velocity_model(r=sigma ** 2))
        err = np.linalg.norm(np.array([s.x[:2] for s in states]) - truth, axis=1)
        assert err.max() <= 5 * sigma


def step_lag(threshold=0.9):
    obs = [(0.0, 0.0)] * 50 + [(100.0, 0.0)] * 50
    xs = [s.x[0] for s in track_sequence(obs)]
    return next(i for i, x in enumerate(xs[50:]) if x >= threshold * 100)


def test_step_response_lag_is_bounded():
    assert step_lag() <= 8


# --- screen mapping ----------------------------------------------------------------------------------


def state_at(x, y):
    return KalmanState(np.array([x, y, 0.0, 0.0]), np.eye(4))


def test_center_maps_to_center():
    s = map_to_screen(state_at(319.5, 239.5), (640, 480), (1920, 1080))
    assert s.smoothed == pytest.approx((959.5, 539.5))


def test_origin_maps_to_top_right_under_mirror():
    assert map_to_screen(state_at(0, 0), (640, 480), (1920, 1080)).smoothed == (1919, 0)


def test_out_of_range_is_clamped():
    s = map_to_screen(state_at(-500, 9000), (640, 480), (1920, 1080))
    assert s.smoothed == (1919, 1079)


@given(st.floats(-1e4, 1e4), st.floats(-1e4, 1e4))
def test_clamped_cursor_within_screen(x, y):
    sx, sy = map_to_screen(state_at(x, y), (640, 480), (800, 600)).smoothed
    assert 0 <= sx < 800 and 0 <= sy < 600


def test_map_rejects_bad_dims():
    with pytest.raises(TrackingError):
        map_to_screen(state_at(0, 0), (0, 480), (10, 10))


# --- smoothness / trace -----------------------------------------------------------------------------


def test_smoothness_examples():
    path = [(0, 0), (1, 0), (3, 0)]
    a, b = smoothness_report(path, path)
    assert a == b
    assert a.max_jump == 2 and a.path_length == 3 and a.rms_jitter == pytest.approx(0.5)
    still, _ = smoothness_report([(4, 4)] * 5, [(4, 4)] * 5)
    assert (still.rms_jitter, still.max_jump, still.path_length) == (0, 0, 0)


def test_smoothness_errors():
    with pytest.raises(TrackingError):
        smoothness_report([(0, 0)], [(0, 0)])
    with pytest.raises(TrackingError):
        smoothness_report([(0, 0), (1, 1)], [(0, 0)])


def test_trace_writer_jsonl():
    tw = TraceWriter()
    s = map_to_screen(state_at(10, 20), (640, 480), (1920, 1080), raw=(10, 20), t_ms=33.3)
    tw.add(s, coasting=False)
    rec = json.loads(tw.text())
    assert set(rec) == {"frame", "t_ms", "raw", "smoothed", "coasting"}
    assert rec["raw"] == [10, 20] and rec["coasting"] is False


def test_non_finite_measurement_rejected():
    tr = Tracker()
    with pytest.raises(TrackingError, match="non-finite"):
        tr.step((float("nan"), 1.0), 0)
    tr.step((1.0, 1.0), 0)
    with pytest.raises(TrackingError, match="non-finite"):
        tr.step((float("inf"), 1.0), 1)
