"""EM estimation of the tracker noise covariances Q and R.

E-step: extended Kalman filter forward pass followed by a Rauch-Tung-Striebel
backward pass.  M-step: closed-form covariance updates from the smoothed
first and second moments, with the observation Jacobian evaluated at the
smoothed states.  For ``b = 0`` this is the exact EM for a linear-Gaussian
state-space model, so the observed-data likelihood cannot decrease.

Measurement rows that are NaN are treated as missing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from numba import njit
from scipy import optimize

from .tracker import DEFAULT_P0, EXPONENT_CLAMP, DynamicsModel, ObservationModel

__all__ = ["EMDivergenceError", "SmootherResult", "smooth", "log_likelihood", "em_steps", "em_fit",
           "initial_covariances"]

PSD_FLOOR = 1e-10
_LOG2PI = np.log(2.0 * np.pi)


class EMDivergenceError(ArithmeticError):
    def __init__(self, iteration: int, msg: str = "non-finite likelihood"):
        super().__init__(f"EM diverged at iteration {iteration}: {msg}")
        self.iteration = iteration


@dataclass
class SmootherResult:
    xf: np.ndarray  # filtered means (n, 4)
    Pf: np.ndarray  # filtered covariances (n, 4, 4)
    xp: np.ndarray  # one-step predictions (n, 4); row 0 is the prior
    Pp: np.ndarray
    xs: np.ndarray  # smoothed means
    Ps: np.ndarray
    Pcross: np.ndarray  # Cov(s_k, s_{k-1} | all data), row 0 unused
    c_prev: np.ndarray  # observation reference used at each frame
    loglik: float


def _psd_project(m: np.ndarray, floor: float = PSD_FLOOR) -> np.ndarray:
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    out = (v * np.maximum(w, floor)) @ v.T
    return 0.5 * (out + out.T)


def _first_valid(c: np.ndarray) -> int:
    ok = np.flatnonzero(np.all(np.isfinite(c), axis=1))
    if len(ok) == 0:
        raise ValueError("no valid measurement")
    return int(ok[0])


@njit(cache=True)
def _smooth_kernel(c, A, Q, R, b, P0, clamp):
    n = c.shape[0]
    xf = np.zeros((n, 4)); Pf = np.zeros((n, 4, 4))
    xp = np.zeros((n, 4)); Pp = np.zeros((n, 4, 4))
    c_prev = np.zeros((n, 2))
    eye = np.eye(4)

    xp[0, 0] = c[0, 0]; xp[0, 2] = c[0, 1]
    for i in range(4):
        Pp[0, i, i] = P0[i]
    xf[0] = xp[0]; Pf[0] = Pp[0]
    c_prev[0] = c[0]
    prev = c[0].copy()
    loglik = 0.0
    Hk = np.zeros((2, 4))
    h = np.zeros(2)
    for k in range(1, n):
        xp[k] = A @ xf[k - 1]
        P = A @ Pf[k - 1] @ A.T + Q
        Pp[k] = 0.5 * (P + P.T)
        c_prev[k] = prev
        if not (np.isfinite(c[k, 0]) and np.isfinite(c[k, 1])):
            xf[k] = xp[k]; Pf[k] = Pp[k]
            prev = np.array([xp[k, 0], xp[k, 2]])
            continue
        for i in range(2):
            m = xp[k, 2 * i]
            z = min(max(-b * (m - prev[i]), -clamp), clamp)
            g = np.exp(z)
            h[i] = g * m
            Hk[i, 2 * i] = g * (1.0 - b * m)
        nu = c[k] - h
        PH = Pp[k] @ Hk.T
        S = Hk @ PH + R
        det = S[0, 0] * S[1, 1] - S[0, 1] * S[1, 0]
        Si = np.array([[S[1, 1], -S[0, 1]], [-S[1, 0], S[0, 0]]]) / det
        K = PH @ Si
        xf[k] = xp[k] + K @ nu
        P = (eye - K @ Hk) @ Pp[k]
        Pf[k] = 0.5 * (P + P.T)
        if det <= 0.0:
            loglik = -np.inf
        else:
            loglik += -0.5 * (2.0 * _LOG2PI + np.log(det) + nu @ (Si @ nu))
        prev = c[k].copy()

    xs = xf.copy(); Ps = Pf.copy(); Pcross = np.zeros((n, 4, 4))
    for k in range(n - 2, -1, -1):
        G = Pf[k] @ A.T @ np.linalg.inv(Pp[k + 1])
        xs[k] = xf[k] + G @ (xs[k + 1] - xp[k + 1])
        P = Pf[k] + G @ (Ps[k + 1] - Pp[k + 1]) @ G.T
        Ps[k] = 0.5 * (P + P.T)
        Pcross[k + 1] = Ps[k + 1] @ G.T
    return xf, Pf, xp, Pp, xs, Ps, Pcross, c_prev, loglik


def smooth(measurements, dyn: DynamicsModel, obs: ObservationModel,
           P0=DEFAULT_P0) -> SmootherResult:
    """Extended RTS smoother over a measurement sequence.

    The first valid measurement initializes the state (zero velocity,
    covariance ``diag(P0)``) and is not reused as an update.
    """
    c = np.asarray(measurements, float)
    c = np.ascontiguousarray(c[_first_valid(c):])
    out = _smooth_kernel(c, np.ascontiguousarray(dyn.A, dtype=float),
                         np.ascontiguousarray(dyn.Q, dtype=float),
                         np.ascontiguousarray(obs.R, dtype=float), float(obs.b),
                         np.asarray(P0, float), float(EXPONENT_CLAMP))
    *arrays, loglik = out
    return SmootherResult(*arrays, float(loglik))


def log_likelihood(measurements, dyn: DynamicsModel, obs: ObservationModel,
                   P0=DEFAULT_P0) -> float:
    """Innovation-form observed-data log-likelihood of the filter."""
    return smooth(measurements, dyn, obs, P0).loglik


def _m_step(c: np.ndarray, sm: SmootherResult, A: np.ndarray, b: float,
            R_old: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xs, Ps, Pc = sm.xs, sm.Ps, sm.Pcross
    # residual moments E[(s_k - A s_{k-1})(s_k - A s_{k-1})^T], k >= 1
    Ekk = Ps[1:] + xs[1:, :, None] * xs[1:, None, :]
    Ek1 = Pc[1:] + xs[1:, :, None] * xs[:-1, None, :]
    E11 = Ps[:-1] + xs[:-1, :, None] * xs[:-1, None, :]
    AEk1 = A @ Ek1.transpose(0, 2, 1)
    Q = (Ekk - AEk1 - AEk1.transpose(0, 2, 1) + A @ E11 @ A.T).mean(axis=0)

    ok = np.flatnonzero(np.all(np.isfinite(c), axis=1))
    ok = ok[ok >= 1]
    if len(ok) == 0:
        return _psd_project(Q), R_old
    m = xs[ok][:, [0, 2]]
    g = np.exp(np.clip(-b * (m - sm.c_prev[ok]), -EXPONENT_CLAMP, EXPONENT_CLAMP))
    e = c[ok] - g * m
    j = g * (1.0 - b * m)  # Jacobian diagonal factors
    HPH = j[:, :, None] * Ps[ok][:, [0, 2]][:, :, [0, 2]] * j[:, None, :]
    R = (e[:, :, None] * e[:, None, :] + HPH).mean(axis=0)
    return _psd_project(Q), _psd_project(R)


def em_steps(measurements, dyn: DynamicsModel, obs: ObservationModel,
             iterations: int = 20, P0=DEFAULT_P0):
    """Yield ``(Q, R, loglik)`` per EM iteration.

    ``loglik`` is the likelihood of the parameters entering that iteration;
    the yielded ``Q, R`` are the re-estimated ones.
    """
    c = np.asarray(measurements, float)
    if len(c) < 10:
        raise ValueError("EM needs at least 10 measurements")
    c = c[_first_valid(c):]
    Q, R = np.asarray(dyn.Q, float), np.asarray(obs.R, float)
    for it in range(iterations):
        d = DynamicsModel(Q=Q, T=dyn.T)
        o = ObservationModel(R=R, b=obs.b)
        sm = smooth(c, d, o, P0)
        if not np.isfinite(sm.loglik):
            raise EMDivergenceError(it)
        Q, R = _m_step(c, sm, d.A, obs.b, R)
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(R))):
            raise EMDivergenceError(it, "non-finite covariance")
        yield Q, R, sm.loglik


def initial_covariances(measurements, dyn: DynamicsModel, obs: ObservationModel,
                        P0=DEFAULT_P0, max_evals: int = 400) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal ``(Q, R)`` that maximize the filter likelihood.

    Q is restricted to ``diag(qp, qv, qp, qv)`` and R to ``r I``; the three
    variances are searched in log space with Nelder-Mead.  The result is a
    starting point for EM, which is slow to move along weakly identified
    directions (typically the position noise when R dominates).
    """
    c = np.asarray(measurements, float)
    c = c[_first_valid(c):]
    ok = c[np.all(np.isfinite(c), axis=1)]
    d2 = np.diff(ok, 2, axis=0)
    r0 = float(np.var(d2)) / 6.0 if len(d2) > 1 else 1.0
    r0 = max(r0, 1e-8)

    def cost(z):
        qp, qv, r = np.exp(z)
        ll = smooth(c, DynamicsModel(Q=np.diag([qp, qv, qp, qv]), T=dyn.T),
                    ObservationModel(R=r * np.eye(2), b=obs.b), P0).loglik
        return -ll if np.isfinite(ll) else np.inf

    z0 = np.log([r0 / 100.0, r0 / 100.0, r0])
    res = optimize.minimize(cost, z0, method="Nelder-Mead",
                            options={"xatol": 1e-3, "fatol": 1e-4, "maxfev": max_evals})
    qp, qv, r = np.exp(res.x)
    return np.diag([qp, qv, qp, qv]), r * np.eye(2)


def em_fit(measurements, dyn: DynamicsModel, obs: ObservationModel,
           iterations: int = 20, P0=DEFAULT_P0,
           warm_start: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Estimate ``(Q, R)`` with a fixed budget of EM iterations.

    With ``warm_start`` the iterations begin from :func:`initial_covariances`
    instead of ``dyn.Q`` / ``obs.R``.
    """
    if warm_start:
        Q0, R0 = initial_covariances(measurements, dyn, obs, P0)
        dyn = DynamicsModel(Q=Q0, T=dyn.T)
        obs = ObservationModel(R=R0, b=obs.b)
    Q, R = dyn.Q, obs.R
    for Q, R, _ in em_steps(measurements, dyn, obs, iterations, P0):
        pass
    return Q, R
