"""Extended Kalman filter for the pupil center.

State ``s = (x, dx, y, dy)`` evolves with a constant-velocity model
``s_k = A s_{k-1} + q_k``.  The detector output is modelled as

    c_k = exp(-b * (H s_k - c_{k-1})) * (H s_k) + r_k

with the exponential taken componentwise and ``c_{k-1}`` the previous
measurement.  With ``b = 0`` the filter reduces to a linear Kalman filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "H",
    "transition_matrix",
    "TrackState",
    "DynamicsModel",
    "ObservationModel",
    "Measurement",
    "initial_state",
    "predict",
    "observe",
    "observe_jacobian",
    "update",
    "step_frame",
    "fit_b",
    "PupilTracker",
]

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
H.setflags(write=False)

EXPONENT_CLAMP = 30.0
CHI2_GATE_99 = 9.21  # chi-square, 2 dof, 99 %
DEFAULT_P0 = (4.0, 25.0, 4.0, 25.0)


def transition_matrix(T: float = 1.0) -> np.ndarray:
    return np.array([
        [1.0, T, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, T],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class TrackState:
    s: np.ndarray  # (4,)
    P: np.ndarray  # (4, 4)
    k: int = 0

    @property
    def position(self) -> tuple[float, float]:
        return float(self.s[0]), float(self.s[2])


@dataclass(frozen=True)
class DynamicsModel:
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.01, 0.01, 0.01, 0.01]))
    T: float = 1.0

    @property
    def A(self) -> np.ndarray:
        return transition_matrix(self.T)


@dataclass(frozen=True)
class ObservationModel:
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    b: float = 0.0
    c_prev: np.ndarray | None = None

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("b must be >= 0")

    def advance(self, c) -> ObservationModel:
        return replace(self, c_prev=np.asarray(c, float).copy())


@dataclass(frozen=True)
class Measurement:
    c: np.ndarray | None
    valid: bool = True

    @classmethod
    def missing(cls) -> Measurement:
        return cls(None, False)


def initial_state(c0, P0=DEFAULT_P0) -> TrackState:
    """Zero-velocity state at the first detection."""
    c0 = np.asarray(c0, float)
    return TrackState(np.array([c0[0], 0.0, c0[1], 0.0]), np.diag(np.asarray(P0, float)), 0)


def predict(state: TrackState, dyn: DynamicsModel) -> TrackState:
    A = dyn.A
    return TrackState(A @ state.s, _sym(A @ state.P @ A.T + dyn.Q), state.k + 1)


def _gain_factor(m: np.ndarray, obs: ObservationModel) -> np.ndarray:
    c_prev = m if obs.c_prev is None else obs.c_prev
    expo = np.clip(-obs.b * (m - c_prev), -EXPONENT_CLAMP, EXPONENT_CLAMP)
    return np.exp(expo)


def observe(s, obs: ObservationModel) -> np.ndarray:
    """Predicted measurement ``h(s)``."""
    m = H @ np.asarray(s, float)
    return _gain_factor(m, obs) * m


def observe_jacobian(s, obs: ObservationModel) -> np.ndarray:
    """2x4 Jacobian of :func:`observe` at ``s``."""
    m = H @ np.asarray(s, float)
    g = _gain_factor(m, obs) * (1.0 - obs.b * m)
    return g[:, None] * H


def _innovation(pred: TrackState, c: np.ndarray, obs: ObservationModel):
    Hk = observe_jacobian(pred.s, obs)
    nu = c - observe(pred.s, obs)
    S = Hk @ pred.P @ Hk.T + obs.R
    return Hk, nu, S


def update(pred: TrackState, meas: Measurement,
           obs: ObservationModel) -> tuple[TrackState, ObservationModel]:
    """Measurement update; returns the posterior and the advanced model.

    Raises:
        numpy.linalg.LinAlgError: the innovation covariance is singular.
    """
    if not meas.valid:
        raise ValueError("update() needs a valid measurement")
    c = np.asarray(meas.c, float)
    Hk, nu, S = _innovation(pred, c, obs)
    K = np.linalg.solve(S.T, (pred.P @ Hk.T).T).T
    s = pred.s + K @ nu
    P = _sym((np.eye(4) - K @ Hk) @ pred.P)
    return TrackState(s, P, pred.k), obs.advance(c)


def step_frame(state: TrackState, meas: Measurement, dyn: DynamicsModel,
               obs: ObservationModel, gate: float | None = CHI2_GATE_99,
               ) -> tuple[TrackState, ObservationModel, bool]:
    """Predict, then update unless the measurement is missing or gated out.

    Returns the new state, the advanced observation model, and whether the
    measurement was used.  Coasting frames advance ``c_prev`` to the
    predicted position.
    """
    pred = predict(state, dyn)
    if meas.valid:
        c = np.asarray(meas.c, float)
        accept = True
        if gate is not None:
            _, nu, S = _innovation(pred, c, obs)
            accept = float(nu @ np.linalg.solve(S, nu)) <= gate
        if accept:
            new, obs = update(pred, meas, obs)
            return new, obs, True
    return pred, obs.advance(H @ pred.s), False


def _b_residual(b: float, m: np.ndarray, c: np.ndarray, c_prev: np.ndarray) -> float:
    expo = np.clip(-b * (m - c_prev), -EXPONENT_CLAMP, EXPONENT_CLAMP)
    r = c - np.exp(expo) * m
    return float(np.sum(r * r))


def fit_b(states, measurements, previous=None, b_max: float = 0.05,
          tol: float = 1e-8, grid: int = 201) -> float:
    """Least-squares estimate of the observation parameter ``b`` on [0, b_max].

    ``previous[k]`` is the measurement preceding ``measurements[k]``; by
    default it is ``measurements[k - 1]``, and ``H s_0`` for the first
    sample (which makes that term independent of ``b``).

    A coarse grid brackets the minimum; golden-section search refines it.
    Exact ties resolve to the smallest ``b``.
    """
    s = np.atleast_2d(np.asarray(states, float))
    c = np.atleast_2d(np.asarray(measurements, float))
    if s.size == 0 or c.size == 0:
        raise ValueError("fit_b needs at least one (state, measurement) pair")
    if s.shape[0] != c.shape[0]:
        raise ValueError("states and measurements differ in length")
    m = s @ H.T
    if previous is None:
        prev = np.vstack([m[:1], c[:-1]])
    else:
        prev = np.atleast_2d(np.asarray(previous, float))

    def f(b):
        return _b_residual(b, m, c, prev)

    bs = np.linspace(0.0, b_max, grid)
    vals = np.array([f(b) for b in bs])
    i = int(np.argmin(vals))  # first minimum on ties
    lo, hi = bs[max(i - 1, 0)], bs[min(i + 1, grid - 1)]

    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, d = lo, hi
    x1, x2 = d - invphi * (d - a), a + invphi * (d - a)
    f1, f2 = f(x1), f(x2)
    while d - a > tol:
        if f1 <= f2:
            d, x2, f2 = x2, x1, f1
            x1 = d - invphi * (d - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (d - a)
            f2 = f(x2)
    # never worse than the best grid point; exact ties go to the smaller b
    return float(min({0.0, float(bs[i]), 0.5 * (a + d)}, key=lambda b: (f(b), b)))


class PupilTracker:
    """Stateful convenience wrapper around :func:`step_frame`."""

    def __init__(self, dyn: DynamicsModel, obs: ObservationModel,
                 P0=DEFAULT_P0, gate: float | None = CHI2_GATE_99):
        self.dyn = dyn
        self.obs = obs
        self.P0 = P0
        self.gate = gate
        self.state: TrackState | None = None

    def step(self, meas: Measurement) -> TrackState | None:
        """Consume one frame; returns ``None`` until the first valid detection."""
        if self.state is None:
            if not meas.valid:
                return None
            self.state = initial_state(meas.c, self.P0)
            self.obs = self.obs.advance(meas.c)
            return self.state
        self.state, self.obs, _ = step_frame(self.state, meas, self.dyn, self.obs, self.gate)
        return self.state
