"""Competitive Agglomeration clustering.

Fuzzy clustering that starts from many prototypes and lets a
cardinality-reward term starve the weak ones.  The minimized objective is

    J = sum_c sum_j u_cj^2 d_cj^2 - alpha * sum_c N_c^2,   N_c = sum_j u_cj

subject to sum_c u_cj = 1 for every point j.  Membership and prototype
updates and the decaying alpha schedule follow Frigui & Krishnapuram's
competitive agglomeration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "CAAConfig",
    "CAAState",
    "objective",
    "init_prototypes",
    "init_state",
    "iterate",
    "run",
    "hard_labels",
]

_D2_FLOOR = 1e-12


@dataclass(frozen=True)
class CAAConfig:
    initial_clusters: int = 5
    max_iterations: int = 100
    convergence_epsilon: float = 1e-3
    alpha_eta0: float = 3.0
    alpha_tau: float = 10.0
    # None means max(5, J / 50)
    cardinality_epsilon: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.initial_clusters < 2:
            raise ValueError("initial_clusters must be >= 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_epsilon <= 0 or self.alpha_tau <= 0 or self.alpha_eta0 < 0:
            raise ValueError("tolerances and alpha_tau must be > 0, alpha_eta0 >= 0")
        if self.cardinality_epsilon is not None and self.cardinality_epsilon <= 0:
            raise ValueError("cardinality_epsilon must be > 0")

    def min_cardinality(self, n_points: int) -> float:
        if self.cardinality_epsilon is not None:
            return self.cardinality_epsilon
        return max(5.0, n_points / 50.0)


@dataclass(frozen=True)
class CAAState:
    prototypes: np.ndarray  # (C, D)
    memberships: np.ndarray  # (C, J)
    alpha: float
    iteration: int = 0
    cardinalities: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        u = self.memberships
        object.__setattr__(self, "cardinalities", u @ np.ones(u.shape[1]))

    @property
    def n_clusters(self) -> int:
        return self.prototypes.shape[0]


def _sq_dist(features: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    d2 = np.zeros((prototypes.shape[0], features.shape[0]))
    for d in range(features.shape[1]):
        diff = prototypes[:, d, None] - features[None, :, d]
        d2 += diff * diff
    return d2


def _fcm_memberships(d2: np.ndarray) -> np.ndarray:
    inv = 1.0 / np.maximum(d2, _D2_FLOOR)
    return inv / inv.sum(axis=0, keepdims=True)


# Kernels work on point-major (J, C) membership arrays; CAAState exposes
# the (C, J) transpose.

@njit(cache=True)
def _update_memberships(f, protos, card, alpha):
    """FCM term plus cardinality bias, clipped to [0, 1], rows renormalized."""
    C, D = protos.shape
    J = f.shape[0]
    u = np.empty((J, C))
    inv = np.empty(C)
    for j in range(J):
        inv_sum = 0.0
        card_bar = 0.0
        for c in range(C):
            d2 = 0.0
            for d in range(D):
                t = f[j, d] - protos[c, d]
                d2 += t * t
            inv[c] = 1.0 / max(d2, _D2_FLOOR)
            inv_sum += inv[c]
            card_bar += inv[c] * card[c]
        card_bar /= inv_sum
        total = 0.0
        for c in range(C):
            v = inv[c] / inv_sum + alpha * inv[c] * (card[c] - card_bar)
            v = min(max(v, 0.0), 1.0)
            u[j, c] = v
            total += v
        if total > 0.0:
            for c in range(C):
                u[j, c] /= total
        else:
            for c in range(C):
                u[j, c] = inv[c] / inv_sum
    return u


@njit(cache=True)
def _weighted_means(u, f):
    J, C = u.shape
    D = f.shape[1]
    num = np.zeros((C, D))
    den = np.zeros(C)
    for j in range(J):
        for c in range(C):
            w = u[j, c] * u[j, c]
            den[c] += w
            for d in range(D):
                num[c, d] += w * f[j, d]
    for c in range(C):
        for d in range(D):
            num[c, d] /= den[c]
    return num


@njit(cache=True)
def _fuzzy_spread(u, f, protos):
    """sum_c sum_j u_cj^2 d_cj^2"""
    J, C = u.shape
    D = f.shape[1]
    total = 0.0
    for j in range(J):
        for c in range(C):
            d2 = 0.0
            for d in range(D):
                t = f[j, d] - protos[c, d]
                d2 += t * t
            total += u[j, c] * u[j, c] * d2
    return total


def _alpha(card, spread, eta0, tau, iteration) -> float:
    return eta0 * np.exp(-iteration / tau) * spread / float(np.sum(card**2))


def objective(features, prototypes, memberships, alpha: float) -> float:
    """Value of the agglomeration objective (squared Euclidean distances)."""
    f = np.atleast_2d(np.asarray(features, float))
    p = np.atleast_2d(np.asarray(prototypes, float))
    u = np.atleast_2d(np.asarray(memberships, float))
    if f.shape[1] != p.shape[1]:
        raise ValueError(f"feature dim {f.shape[1]} != prototype dim {p.shape[1]}")
    if u.shape != (p.shape[0], f.shape[0]):
        raise ValueError(f"memberships shape {u.shape} != {(p.shape[0], f.shape[0])}")
    d2 = _sq_dist(f, p)
    return float(np.sum(u**2 * d2) - alpha * np.sum(u.sum(axis=1) ** 2))


def init_prototypes(features, n_clusters: int, seed: int = 0) -> np.ndarray:
    """Draw ``n_clusters`` feature points without replacement."""
    f = np.atleast_2d(np.asarray(features, float))
    if f.shape[0] < n_clusters:
        raise ValueError(f"need at least {n_clusters} points, got {f.shape[0]}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(f.shape[0], size=n_clusters, replace=False)
    return f[idx].copy()


def init_state(features, config: CAAConfig) -> CAAState:
    f = np.ascontiguousarray(np.atleast_2d(np.asarray(features, float)))
    protos = init_prototypes(f, config.initial_clusters, config.seed)
    u = _fcm_memberships(_sq_dist(f, protos))
    spread = _fuzzy_spread(np.ascontiguousarray(u.T), f, protos)
    alpha = _alpha(u.sum(axis=1), spread, config.alpha_eta0, config.alpha_tau, 0)
    return CAAState(protos, u, alpha, 0)


def _normalize_columns(u: np.ndarray, d2: np.ndarray) -> np.ndarray:
    s = u.sum(axis=0)
    empty = s <= 0
    if empty.any():
        # points whose mass sat entirely in removed clusters fall back to FCM
        u[:, empty] = _fcm_memberships(d2[:, empty])
        s = u.sum(axis=0)
    return u / s


def iterate(state: CAAState, features, config: CAAConfig) -> CAAState:
    """One membership / discard / prototype / alpha round."""
    f = np.ascontiguousarray(np.atleast_2d(np.asarray(features, float)))
    ut = _update_memberships(f, state.prototypes, state.cardinalities, float(state.alpha))

    ones = np.ones(f.shape[0])
    card = ones @ ut
    keep = card >= config.min_cardinality(f.shape[0])
    if not keep.any():
        keep[np.argmax(card)] = True
    if not keep.all():
        d2 = _sq_dist(f, state.prototypes[keep])
        ut = np.ascontiguousarray(_normalize_columns(ut[:, keep].T, d2).T)

    protos = _weighted_means(ut, f)

    # coincident prototypes are indistinguishable: fold them into the first
    _, first = np.unique(protos, axis=0, return_index=True)
    if len(first) < protos.shape[0]:
        first = np.sort(first)
        owner = np.array([first[np.flatnonzero((protos[first] == p).all(axis=1))[0]]
                          for p in protos])
        ut = np.column_stack([ut[:, owner == i].sum(axis=1) for i in first])
        protos = protos[first]

    alpha = _alpha(ones @ ut, _fuzzy_spread(ut, f, protos), config.alpha_eta0,
                   config.alpha_tau, state.iteration + 1)
    return CAAState(protos, ut.T, alpha, state.iteration + 1)


def run(features, config: CAAConfig | None = None) -> CAAState:
    """Cluster ``features`` (J x D) until prototypes stop moving."""
    config = config or CAAConfig()
    f = np.ascontiguousarray(np.atleast_2d(np.asarray(features, float)))
    state = init_state(f, config)
    for _ in range(config.max_iterations):
        new = iterate(state, f, config)
        if new.n_clusters == state.n_clusters:
            move = np.max(np.linalg.norm(new.prototypes - state.prototypes, axis=1))
            state = new
            if move < config.convergence_epsilon:
                break
        else:
            state = new
    return state


def hard_labels(state: CAAState) -> np.ndarray:
    """Index of the maximum-membership cluster per point (lowest index on ties)."""
    return np.argmax(state.memberships, axis=0)

