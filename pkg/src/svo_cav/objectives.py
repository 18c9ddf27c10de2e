"""Stage costs of the merging game, the SVO-weighted potential and its derivatives.

Every horizon objective used here is a weighted sum

    alpha1 * sum(l1) + alpha2 * sum(l2) + alpha12 * sum(l12)

of the CAV ego cost ``l1``, the HDV ego cost ``l2`` and the shared
collision-avoidance barrier ``l12``. The potential and both players' own
objectives only differ in the three weights, see :func:`potential_weights`
and :func:`player_weights`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from svo_cav.core import ScenarioConfig, SvoPair, TrajectorySegment, VehicleState, check_angle
from svo_cav.dynamics import influence_matrices, rollout_arrays, state_jacobians


@dataclass(frozen=True)
class FeatureVector:
    f_ego2: float
    f_coop: float

    def as_array(self) -> np.ndarray:
        return np.array([self.f_ego2, self.f_coop])


@dataclass(frozen=True)
class ThetaWeights:
    c: float
    s: float

    @classmethod
    def from_phi(cls, phi: float) -> ThetaWeights:
        return cls(math.cos(phi), math.sin(phi))

    def as_array(self) -> np.ndarray:
        return np.array([self.c, self.s])


def ego_cost_cav(x_next: VehicleState, u: float, cfg: ScenarioConfig) -> float:
    return cfg.w1 * u * u + cfg.w2 * (x_next.speed - cfg.v_max) ** 2


def ego_cost_hdv(x_next: VehicleState, u: float, cfg: ScenarioConfig) -> float:
    return cfg.w3 * u * u + cfg.w4 * (x_next.speed - cfg.v_max) ** 2


def barrier(D, cfg: ScenarioConfig):
    """Barrier ``w5 / D`` and its first two derivatives in ``D``.

    Below ``barrier_epsilon`` the barrier is continued by its tangent line at
    ``epsilon`` so the penalty stays finite and C1 for every D.
    """
    D = np.asarray(D, dtype=float)
    eps = cfg.barrier_epsilon
    w5 = cfg.w5
    smooth = D > eps
    Ds = np.where(smooth, D, eps)
    value = np.where(smooth, w5 / Ds, w5 / eps - (w5 / eps**2) * (D - eps))
    d1 = -w5 / Ds**2
    d2 = np.where(smooth, 2.0 * w5 / Ds**3, 0.0)
    return value, d1, d2


def coop_cost(x1_next: VehicleState, x2_next: VehicleState, cfg: ScenarioConfig) -> float:
    D = x1_next.position**2 + x2_next.position**2 - cfg.r**2
    return float(barrier(D, cfg)[0])


def weighted_cost_player(player: int, phi: float, ego: float, coop: float) -> float:
    if player not in (1, 2):
        raise ValueError(f"player must be 1 or 2, got {player}")
    check_angle(phi)
    return ego * math.cos(phi) + coop * math.sin(phi)


def potential_weights(svo: SvoPair) -> tuple[float, float, float]:
    s1, c1 = math.sin(svo.phi1), math.cos(svo.phi1)
    s2, c2 = math.sin(svo.phi2), math.cos(svo.phi2)
    return c1 * s2, s1 * c2, s1 * s2


def player_weights(player: int, svo: SvoPair) -> tuple[float, float, float]:
    if player == 1:
        return math.cos(svo.phi1), 0.0, math.sin(svo.phi1)
    if player == 2:
        return 0.0, math.cos(svo.phi2), math.sin(svo.phi2)
    raise ValueError(f"player must be 1 or 2, got {player}")


def potential_cost(
    x1n: VehicleState, u1: float, x2n: VehicleState, u2: float, svo: SvoPair, cfg: ScenarioConfig
) -> float:
    a1, a2, a12 = potential_weights(svo)
    return (
        a1 * ego_cost_cav(x1n, u1, cfg)
        + a2 * ego_cost_hdv(x2n, u2, cfg)
        + a12 * coop_cost(x1n, x2n, cfg)
    )


def _check_lengths(seq1, seq2):
    seq1 = np.asarray(seq1, dtype=float)
    seq2 = np.asarray(seq2, dtype=float)
    if seq1.ndim != 1 or seq1.shape != seq2.shape or seq1.size == 0:
        raise ValueError("control sequences must be non-empty 1-D arrays of equal length")
    return seq1, seq2


def horizon_terms(x1_0: VehicleState, x2_0: VehicleState, seq1, seq2, cfg: ScenarioConfig):
    """Per-stage arrays ``(l1, l2, l12)`` over the horizon."""
    seq1, seq2 = _check_lengths(seq1, seq2)
    p1, v1 = rollout_arrays(x1_0.position, x1_0.speed, seq1, cfg.dt)
    p2, v2 = rollout_arrays(x2_0.position, x2_0.speed, seq2, cfg.dt)
    l1 = cfg.w1 * seq1**2 + cfg.w2 * (v1 - cfg.v_max) ** 2
    l2 = cfg.w3 * seq2**2 + cfg.w4 * (v2 - cfg.v_max) ** 2
    l12 = barrier(p1**2 + p2**2 - cfg.r**2, cfg)[0]
    return l1, l2, l12


def horizon_weighted(x1_0, x2_0, seq1, seq2, weights, cfg: ScenarioConfig) -> float:
    l1, l2, l12 = horizon_terms(x1_0, x2_0, seq1, seq2, cfg)
    a1, a2, a12 = weights
    return float(a1 * l1.sum() + a2 * l2.sum() + a12 * l12.sum())


def horizon_potential(x1_0, x2_0, seq1, seq2, svo: SvoPair, cfg: ScenarioConfig) -> float:
    return horizon_weighted(x1_0, x2_0, seq1, seq2, potential_weights(svo), cfg)


def horizon_player_cost(player: int, x1_0, x2_0, seq1, seq2, svo: SvoPair, cfg: ScenarioConfig) -> float:
    """Horizon sum of one player's own SVO-weighted objective."""
    return horizon_weighted(x1_0, x2_0, seq1, seq2, player_weights(player, svo), cfg)


def horizon_weighted_gradient(x1_0, x2_0, seq1, seq2, weights, cfg: ScenarioConfig):
    """Gradient of :func:`horizon_weighted` by a backward (adjoint) sweep."""
    seq1, seq2 = _check_lengths(seq1, seq2)
    A, B = state_jacobians(cfg.dt)
    b = B[:, 0]
    a1, a2, a12 = weights
    p1, v1 = rollout_arrays(x1_0.position, x1_0.speed, seq1, cfg.dt)
    p2, v2 = rollout_arrays(x2_0.position, x2_0.speed, seq2, cfg.dt)
    _, dB, _ = barrier(p1**2 + p2**2 - cfg.r**2, cfg)

    H = seq1.size
    grad1 = np.empty(H)
    grad2 = np.empty(H)
    lam1 = np.zeros(2)
    lam2 = np.zeros(2)
    for k in range(H - 1, -1, -1):
        # adjoint of x_{k+1}: direct stage-k contribution plus propagated future
        lam1 = np.array([a12 * dB[k] * 2 * p1[k], a1 * 2 * cfg.w2 * (v1[k] - cfg.v_max)]) + lam1
        lam2 = np.array([a12 * dB[k] * 2 * p2[k], a2 * 2 * cfg.w4 * (v2[k] - cfg.v_max)]) + lam2
        grad1[k] = a1 * 2 * cfg.w1 * seq1[k] + b @ lam1
        grad2[k] = a2 * 2 * cfg.w3 * seq2[k] + b @ lam2
        lam1 = A.T @ lam1
        lam2 = A.T @ lam2
    return grad1, grad2


def horizon_potential_gradient(x1_0, x2_0, seq1, seq2, svo: SvoPair, cfg: ScenarioConfig):
    return horizon_weighted_gradient(x1_0, x2_0, seq1, seq2, potential_weights(svo), cfg)


class HorizonObjective:
    """Fast evaluator of a weighted horizon objective with exact Hessian.

    Used by the solver; the decision vector is ``concatenate([seq1, seq2])``.
    """

    def __init__(self, x1_0: VehicleState, x2_0: VehicleState, weights, cfg: ScenarioConfig):
        self.cfg = cfg
        self.weights = tuple(float(w) for w in weights)
        H = cfg.H
        dt = cfg.dt
        Mp, Mv = influence_matrices(H, dt)
        self.Mp, self.Mv = Mp, Mv
        k1 = np.arange(1, H + 1)
        self.p1_free = x1_0.position + dt * k1 * x1_0.speed
        self.p2_free = x2_0.position + dt * k1 * x2_0.speed
        self.v1_free = np.full(H, x1_0.speed)
        self.v2_free = np.full(H, x2_0.speed)
        a1, a2, _ = self.weights
        MvtMv = Mv.T @ Mv
        self.ego_hess1 = a1 * (2 * cfg.w1 * np.eye(H) + 2 * cfg.w2 * MvtMv)
        self.ego_hess2 = a2 * (2 * cfg.w3 * np.eye(H) + 2 * cfg.w4 * MvtMv)

    def _split(self, z):
        H = self.cfg.H
        return z[:H], z[H:]

    def value(self, z: np.ndarray) -> float:
        cfg = self.cfg
        u1, u2 = self._split(z)
        p1 = self.p1_free + self.Mp @ u1
        p2 = self.p2_free + self.Mp @ u2
        v1 = self.v1_free + self.Mv @ u1
        v2 = self.v2_free + self.Mv @ u2
        a1, a2, a12 = self.weights
        l1 = cfg.w1 * u1 @ u1 + cfg.w2 * np.sum((v1 - cfg.v_max) ** 2)
        l2 = cfg.w3 * u2 @ u2 + cfg.w4 * np.sum((v2 - cfg.v_max) ** 2)
        l12 = np.sum(barrier(p1**2 + p2**2 - cfg.r**2, cfg)[0])
        return float(a1 * l1 + a2 * l2 + a12 * l12)

    def evaluate(self, z: np.ndarray, hessian: bool = True):
        """Return ``(value, gradient, hessian)``; the Hessian is None unless requested."""
        cfg = self.cfg
        u1, u2 = self._split(z)
        Mp, Mv = self.Mp, self.Mv
        p1 = self.p1_free + Mp @ u1
        p2 = self.p2_free + Mp @ u2
        v1 = self.v1_free + Mv @ u1
        v2 = self.v2_free + Mv @ u2
        a1, a2, a12 = self.weights
        e1 = v1 - cfg.v_max
        e2 = v2 - cfg.v_max
        B, dB, d2B = barrier(p1**2 + p2**2 - cfg.r**2, cfg)
        f = (
            a1 * (cfg.w1 * u1 @ u1 + cfg.w2 * e1 @ e1)
            + a2 * (cfg.w3 * u2 @ u2 + cfg.w4 * e2 @ e2)
            + a12 * B.sum()
        )
        gp1 = a12 * dB * 2 * p1
        gp2 = a12 * dB * 2 * p2
        g1 = a1 * (2 * cfg.w1 * u1 + Mv.T @ (2 * cfg.w2 * e1)) + Mp.T @ gp1
        g2 = a2 * (2 * cfg.w3 * u2 + Mv.T @ (2 * cfg.w4 * e2)) + Mp.T @ gp2
        g = np.concatenate([g1, g2])
        if not hessian:
            return float(f), g, None
        # Hessian of the barrier in (p1_k, p2_k): 4 d2B p p^T + 2 dB I
        h11 = a12 * (4 * d2B * p1 * p1 + 2 * dB)
        h22 = a12 * (4 * d2B * p2 * p2 + 2 * dB)
        h12 = a12 * (4 * d2B * p1 * p2)
        Hm11 = self.ego_hess1 + Mp.T @ (h11[:, None] * Mp)
        Hm22 = self.ego_hess2 + Mp.T @ (h22[:, None] * Mp)
        Hm12 = Mp.T @ (h12[:, None] * Mp)
        Hm = np.block([[Hm11, Hm12], [Hm12.T, Hm22]])
        return float(f), g, Hm


def features(seg: TrajectorySegment, cfg: ScenarioConfig) -> FeatureVector:
    return FeatureVector(
        ego_cost_hdv(seg.x2_next, seg.u2, cfg),
        coop_cost(seg.x1_next, seg.x2_next, cfg),
    )
