"""Discrete double-integrator longitudinal model."""

from __future__ import annotations

import numpy as np

from svo_cav.core import VehicleState


def step(x: VehicleState, u: float, dt: float) -> VehicleState:
    return VehicleState(
        x.position + dt * x.speed + 0.5 * dt * dt * u,
        x.speed + dt * u,
    )


def rollout(x0: VehicleState, seq, dt: float) -> list[VehicleState]:
    """States at k+1..k+H; the initial state is not included."""
    states = []
    x = x0
    for u in np.asarray(seq, dtype=float):
        x = step(x, float(u), dt)
        states.append(x)
    return states


def state_jacobians(dt: float) -> tuple[np.ndarray, np.ndarray]:
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt * dt], [dt]])
    return A, B


def rollout_arrays(p0: float, v0: float, seq: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized rollout returning (positions, speeds) at k+1..k+H."""
    seq = np.asarray(seq, dtype=float)
    v = v0 + dt * np.cumsum(seq)
    v_prev = np.concatenate(([v0], v[:-1]))
    p = p0 + np.cumsum(dt * v_prev + 0.5 * dt * dt * seq)
    return p, v


def influence_matrices(H: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear maps from an acceleration sequence to the rolled-out positions and speeds.

    ``p = p_free + Mp @ a`` and ``v = v_free + Mv @ a`` where the free terms
    are the zero-input rollout.
    """
    k = np.arange(H)[:, None]
    j = np.arange(H)[None, :]
    lower = j <= k
    Mp = np.where(lower, dt * dt * (k - j + 0.5), 0.0)
    Mv = np.where(lower, dt, 0.0)
    return Mp, Mv
