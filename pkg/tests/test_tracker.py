import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pupiltrack import tracker as tk
from pupiltrack.tracker import (
    CHI2_GATE_99, H, DynamicsModel, Measurement, ObservationModel, PupilTracker,
    TrackState, fit_b, initial_state, observe, observe_jacobian, predict, step_frame,
    transition_matrix, update,
)

from oracles import LinearKF


def random_psd(rng, n, scale=1.0):
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T + 0.1 * np.eye(n))


def fd_jacobian(s, obs, h=1e-4):
    J = np.zeros((2, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        J[:, i] = (observe(s + e, obs) - observe(s - e, obs)) / (2 * h)
    return J


def test_structural_matrices():
    np.testing.assert_array_equal(H, [[1, 0, 0, 0], [0, 0, 1, 0]])
    np.testing.assert_array_equal(transition_matrix(2.5),
                                  [[1, 2.5, 0, 0], [0, 1, 0, 0], [0, 0, 1, 2.5], [0, 0, 0, 1]])
    with pytest.raises(ValueError):
        H[0, 0] = 5


def test_predict_examples():
    dyn = DynamicsModel(Q=np.zeros((4, 4)))
    p = predict(TrackState(np.array([10.0, 1, 20, 2]), np.zeros((4, 4))), dyn)
    np.testing.assert_array_equal(p.s, [11, 1, 22, 2])
    Q0 = np.diag([1.0, 2, 3, 4])
    p = predict(TrackState(np.zeros(4), np.zeros((4, 4))), DynamicsModel(Q=Q0))
    np.testing.assert_array_equal(p.P, Q0)
    st_ = TrackState(np.array([5.0, 0, 7, 0]), np.eye(4))
    for _ in range(10):
        st_ = predict(st_, dyn)
    np.testing.assert_array_equal(st_.s, [5, 0, 7, 0])


def test_observe_examples():
    s = np.array([110.0, 3, 110, -2])
    np.testing.assert_array_equal(observe(s, ObservationModel(b=0.0, c_prev=(1, 2))), [110, 110])
    assert observe(s, ObservationModel(b=0.3, c_prev=(110, 110))).tolist() == [110, 110]
    h = observe(s, ObservationModel(b=0.01, c_prev=(100, 100)))
    # frozen from math.exp: 110 * exp(-0.1)
    np.testing.assert_allclose(h, 99.53211598395555, rtol=1e-14)
    assert h[0] == pytest.approx(99.5326, abs=1e-3)


def test_jacobian_examples():
    s = np.array([100.0, 1, 100, 1])
    np.testing.assert_array_equal(observe_jacobian(s, ObservationModel(b=0.0)), H)
    J = observe_jacobian(s, ObservationModel(b=0.01, c_prev=(100, 100)))
    np.testing.assert_array_equal(J, np.zeros((2, 4)))


def test_exponent_clamp_keeps_values_finite():
    obs = ObservationModel(b=10.0, c_prev=(0.0, 0.0))
    h = observe(np.array([1e6, 0, -1e6, 0]), obs)
    assert np.all(np.isfinite(h))
    assert h[0] == pytest.approx(1e6 * np.exp(-30))
    assert h[1] == pytest.approx(-1e6 * np.exp(30))


def test_negative_b_rejected():
    with pytest.raises(ValueError):
        ObservationModel(b=-0.1)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    s = np.array([rng.uniform(50, 600), rng.normal(), rng.uniform(50, 450), rng.normal()])
    obs = ObservationModel(b=rng.uniform(0, 0.05), c_prev=s[[0, 2]] + rng.normal(0, 5, 2))
    J = observe_jacobian(s, obs)
    Jfd = fd_jacobian(s, obs)
    scale = np.maximum(np.abs(J), 1e-3)
    assert np.max(np.abs(J - Jfd) / scale) < 1e-5


def test_update_matches_linear_kf_b0(rng):
    for _ in range(20):
        P = random_psd(rng, 4)
        R = random_psd(rng, 2, 0.5)
        s = rng.normal(100, 10, 4)
        z = rng.normal(100, 10, 2)
        post, _ = update(TrackState(s, P), Measurement(z), ObservationModel(R=R, b=0.0))
        ref = LinearKF(np.eye(4), H, np.zeros((4, 4)), R, s, P)
        ref.update(z)
        np.testing.assert_allclose(post.s, ref.x, atol=1e-9, rtol=0)
        np.testing.assert_allclose(post.P, ref.P, atol=1e-9, rtol=0)


def test_large_R_leaves_prediction(rng):
    P = random_psd(rng, 4)
    R0 = random_psd(rng, 2)
    s = np.array([100.0, 1, 200, -1])
    z = np.array([104.0, 195.0])
    base, _ = update(TrackState(s, P), Measurement(z), ObservationModel(R=R0))
    big, _ = update(TrackState(s, P), Measurement(z), ObservationModel(R=R0 * 1e6 * np.trace(P)))
    assert np.linalg.norm(big.s - s) < 1e-3 * np.linalg.norm(base.s - s)


def test_zero_innovation(rng):
    P = random_psd(rng, 4)
    s = np.array([100.0, 1, 200, -1])
    obs = ObservationModel(R=np.eye(2), b=0.004, c_prev=(98.0, 203.0))
    z = observe(s, obs)
    post, new_obs = update(TrackState(s, P), Measurement(z), obs)
    np.testing.assert_allclose(post.s, s, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(P - post.P) >= -1e-9)
    assert np.trace(post.P) < np.trace(P)
    np.testing.assert_array_equal(new_obs.c_prev, z)


def test_step_frame_valid_equals_compose(rng):
    dyn = DynamicsModel(Q=random_psd(rng, 4, 0.01))
    obs = ObservationModel(R=np.eye(2), b=0.002, c_prev=(100.0, 100.0))
    st0 = TrackState(np.array([101.0, 1, 99, 0.5]), random_psd(rng, 4))
    z = Measurement(np.array([102.0, 99.6]))
    a, oa, used = step_frame(st0, z, dyn, obs, gate=None)
    b, ob = update(predict(st0, dyn), z, obs)
    assert used
    np.testing.assert_array_equal(a.s, b.s)
    np.testing.assert_array_equal(a.P, b.P)


def test_step_frame_coasting():
    dyn = DynamicsModel(Q=np.zeros((4, 4)))
    obs = ObservationModel(c_prev=(10.0, 20.0))
    st_ = TrackState(np.array([10.0, 2, 20, -1]), np.eye(4))
    for k in range(1, 4):
        st_, obs, used = step_frame(st_, Measurement.missing(), dyn, obs)
        assert not used
        np.testing.assert_array_equal(st_.s, [10 + 2 * k, 2, 20 - k, -1])
        np.testing.assert_array_equal(obs.c_prev, [10 + 2 * k, 20 - k])


def test_gate_rejects_outlier():
    dyn = DynamicsModel()
    obs = ObservationModel(R=np.eye(2), c_prev=(100.0, 100.0))
    st0 = TrackState(np.array([100.0, 0, 100, 0]), np.eye(4))
    s1, _, used = step_frame(st0, Measurement(np.array([160.0, 100.0])), dyn, obs,
                             gate=CHI2_GATE_99)
    assert not used
    np.testing.assert_array_equal(s1.s, predict(st0, dyn).s)
    _, _, used = step_frame(st0, Measurement(np.array([100.5, 100.0])), dyn, obs)
    assert used


def test_tracker_b0_matches_linear_kf_over_run(rng):
    Q = random_psd(rng, 4, 0.01)
    R = random_psd(rng, 2, 0.5)
    dyn, A = DynamicsModel(Q=Q, T=1.0), transition_matrix(1.0)
    zs = np.cumsum(rng.normal(0.3, 1.0, (500, 2)), axis=0) + 200
    trk = PupilTracker(dyn, ObservationModel(R=R, b=0.0), gate=None)
    first = trk.step(Measurement(zs[0]))
    ref = LinearKF(A, H, Q, R, first.s, first.P)
    for z in zs[1:]:
        st_ = trk.step(Measurement(z))
        ref.predict()
        ref.update(z)
        np.testing.assert_allclose(st_.s, ref.x, atol=1e-9, rtol=0)


def test_tracker_waits_for_first_detection():
    trk = PupilTracker(DynamicsModel(), ObservationModel())
    assert trk.step(Measurement.missing()) is None
    st_ = trk.step(Measurement(np.array([5.0, 6.0])))
    np.testing.assert_array_equal(st_.s, [5, 0, 6, 0])
    np.testing.assert_array_equal(st_.P, np.diag(tk.DEFAULT_P0))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_covariance_stays_psd_and_shrinks(seed):
    rng = np.random.default_rng(seed)
    dyn = DynamicsModel(Q=random_psd(rng, 4, 0.05))
    obs = ObservationModel(R=random_psd(rng, 2, 0.5), b=rng.uniform(0, 0.01))
    st_ = initial_state((300.0, 200.0))
    obs = obs.advance((300.0, 200.0))
    for _ in range(1000):
        pred = predict(st_, dyn)
        if rng.random() < 0.1:
            st_, obs, _ = step_frame(st_, Measurement.missing(), dyn, obs)
            continue
        z = pred.s[[0, 2]] + rng.normal(0, 1, 2)
        post, obs = update(pred, Measurement(z), obs)
        np.testing.assert_array_equal(post.P, post.P.T)
        assert np.linalg.eigvalsh(post.P).min() >= -1e-9
        assert np.linalg.eigvalsh(pred.P - post.P).min() >= -1e-9 * max(1, np.abs(pred.P).max())
        st_ = post


def test_replay_is_bitwise_identical(rng):
    zs = [Measurement(z) if rng.random() > 0.1 else Measurement.missing()
          for z in rng.normal(200, 3, (200, 2))]

    def replay():
        t = PupilTracker(DynamicsModel(), ObservationModel(R=4 * np.eye(2), b=0.003))
        return np.array([t.step(z).s if t.state or z.valid else np.full(4, -1.0) for z in zs])

    assert replay().tobytes() == replay().tobytes()


def generate_b_data(b, n=60, seed=0):
    rng = np.random.default_rng(seed)
    s = np.array([300.0, 0.8, 200.0, -0.5])
    A = transition_matrix(1.0)
    states, cs = [], []
    prev = None
    for _ in range(n):
        s = A @ s + rng.normal(0, [0.5, 0.05, 0.5, 0.05])
        obs = ObservationModel(b=b, c_prev=prev)
        c = observe(s, obs)
        states.append(s.copy())
        cs.append(c)
        prev = c
    return np.array(states), np.array(cs)


def test_fit_b_round_trip():
    states, cs = generate_b_data(0.005)
    assert abs(fit_b(states, cs) - 0.005) < 1e-4


def test_fit_b_zero_when_measurements_are_positions():
    states, _ = generate_b_data(0.0)
    assert fit_b(states, states @ H.T) == 0.0


def test_fit_b_single_uninformative_pair():
    s = np.array([[50.0, 1, 60, 0]])
    assert fit_b(s, [[50.0, 60.0]], previous=[[50.0, 60.0]]) == 0.0


def test_fit_b_empty():
    with pytest.raises(ValueError):
        fit_b([], [])
