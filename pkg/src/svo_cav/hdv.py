"""Synthetic human driver that best-responds with a hidden SVO angle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from svo_cav.core import ScenarioConfig, SvoPair, VehicleState, check_angle
from svo_cav.dynamics import step
from svo_cav.objectives import barrier
from svo_cav.solver import best_response

# the human is unconstrained; this box only guards the numerics
HDV_ACCEL_LIMIT = 50.0
_GRID = np.linspace(-HDV_ACCEL_LIMIT, HDV_ACCEL_LIMIT, 401)


class OneStepCost:
    """HDV one-step cost ``cos(phi2) l2 + sin(phi2) l12`` as a function of its acceleration.

    The CAV's next position is fixed. ``values`` evaluates a whole array of
    candidate accelerations, ``derivatives`` gives value, slope and curvature.
    """

    def __init__(self, cav_next_position: float, x2: VehicleState, phi2: float, cfg: ScenarioConfig):
        self.cfg = cfg
        self.c, self.s = math.cos(phi2), math.sin(phi2)
        dt = cfg.dt
        self.hp = 0.5 * dt * dt
        self.p_free = x2.position + dt * x2.speed
        self.e_free = x2.speed - cfg.v_max
        self.offset = cav_next_position**2 - cfg.r**2

    def values(self, a):
        cfg = self.cfg
        a = np.asarray(a, dtype=float)
        p2 = self.p_free + self.hp * a
        e = self.e_free + cfg.dt * a
        B = barrier(self.offset + p2 * p2, cfg)[0]
        return self.c * (cfg.w3 * a * a + cfg.w4 * e * e) + self.s * B

    def derivatives(self, a: float) -> tuple[float, float, float]:
        cfg = self.cfg
        hp = self.hp
        p2 = self.p_free + hp * a
        e = self.e_free + cfg.dt * a
        B, dB, d2B = (float(v) for v in barrier(self.offset + p2 * p2, cfg))
        f = self.c * (cfg.w3 * a * a + cfg.w4 * e * e) + self.s * B
        g = self.c * (2 * cfg.w3 * a + 2 * cfg.w4 * cfg.dt * e) + self.s * dB * 2 * p2 * hp
        h = self.c * (2 * cfg.w3 + 2 * cfg.w4 * cfg.dt**2) + self.s * (d2B * (2 * p2 * hp) ** 2 + dB * 2 * hp * hp)
        return f, g, h


def _newton_1d(cost: OneStepCost, a: float, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Projected Newton iteration with Armijo backtracking on ``[lo, hi]``."""
    f, g, h = cost.derivatives(a)
    for _ in range(100):
        if abs(g) <= tol * max(1.0, abs(f)):
            break
        if (a <= lo and g > 0) or (a >= hi and g < 0):
            break
        d = -g / h if h > 0 else -g
        t = 1.0
        while True:
            trial = min(max(a + t * d, lo), hi)
            f_trial = float(cost.values(trial))
            if f_trial <= f + 1e-4 * g * (trial - a) or abs(trial - a) < 1e-15:
                break
            t *= 0.5
        if abs(trial - a) < 1e-15 * max(1.0, abs(a)):
            break
        a = trial
        f, g, h = cost.derivatives(a)
    return a


def minimize_one_step(cav_next_position: float, x2: VehicleState, phi2: float, cfg: ScenarioConfig) -> float:
    """Globally minimize the HDV one-step cost over ``[-50, 50]`` m/s^2.

    A coarse grid picks the basin, then Newton steps refine it.
    """
    cost = OneStepCost(cav_next_position, x2, phi2, cfg)
    a0 = float(_GRID[int(np.argmin(cost.values(_GRID)))])
    return _newton_1d(cost, a0, -HDV_ACCEL_LIMIT, HDV_ACCEL_LIMIT)


@dataclass(frozen=True)
class HdvPolicy:
    true_phi2: float
    horizon: int = 1
    noise_std: float = 0.0

    def __post_init__(self):
        check_angle(self.true_phi2, "true_phi2")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.noise_std >= 0:
            raise ValueError("noise_std must be non-negative")


def hdv_action(
    policy: HdvPolicy,
    x1: VehicleState,
    x2: VehicleState,
    cav_predicted_u1: float,
    cfg: ScenarioConfig,
    rng: np.random.Generator | int | None = None,
) -> float:
    """Acceleration of the synthetic human driver.

    The driver assumes the CAV keeps ``cav_predicted_u1`` over its lookahead
    and minimizes ``cos(phi2) l2 + sin(phi2) l12`` with its true angle.
    Outside the control zone the driver holds its speed.
    """
    if x2.position < -cfg.Lc:
        return 0.0
    if policy.horizon == 1:
        x1_next = step(x1, cav_predicted_u1, cfg.dt)
        a = minimize_one_step(x1_next.position, x2, policy.true_phi2, cfg)
    else:
        h_cfg = cfg.with_overrides(H=policy.horizon)
        svo = SvoPair.from_angles(math.pi / 4, policy.true_phi2)
        seq = best_response(2, np.full(policy.horizon, cav_predicted_u1), x1, x2, svo, h_cfg)
        a = float(seq[0])
    if policy.noise_std > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        a += float(gen.normal(0.0, policy.noise_std))
    return a
