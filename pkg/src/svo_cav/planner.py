"""Receding-horizon planner of the CAV."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from svo_cav.core import HALF_PI, ScenarioConfig, SvoPair, VehicleState, check_angle
from svo_cav.solver import SolverOptions, SolverResult, make_feasible, solve


def adapt_cav_svo(phi2_estimate: float) -> float:
    """CAV angle that mirrors the human's: egoistic humans get an altruistic CAV."""
    check_angle(phi2_estimate, "phi2_estimate")
    return HALF_PI - phi2_estimate


@dataclass(frozen=True)
class PlannerState:
    previous_solution: tuple[np.ndarray, np.ndarray] | None = None
    current_svo: SvoPair | None = None
    last_result: SolverResult | None = None


def shift_warm_start(solution: tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    seq1, seq2 = solution
    return (
        np.concatenate([seq1[1:], seq1[-1:]]),
        np.concatenate([seq2[1:], seq2[-1:]]),
    )


def in_control_zone(x: VehicleState, cfg: ScenarioConfig) -> bool:
    return x.position >= -cfg.Lc


def plan_step(
    x1: VehicleState,
    x2: VehicleState,
    phi2_estimate: float,
    state: PlannerState,
    cfg: ScenarioConfig,
    opts: SolverOptions = SolverOptions(),
    shift: bool = True,
) -> tuple[float, np.ndarray, PlannerState]:
    """Solve the joint problem and return ``(u1, predicted HDV sequence, new state)``.

    The previous solution, shifted one step (last element repeated), warm
    starts the solver; ``shift=False`` reuses it unshifted. Outside the
    control zone the CAV cruises (zero acceleration) and the state carries
    no solution.
    """
    phi1 = adapt_cav_svo(phi2_estimate)
    svo = SvoPair.from_angles(phi1, phi2_estimate)
    if not in_control_zone(x1, cfg):
        return 0.0, np.zeros(cfg.H), PlannerState(None, svo, None)
    warm = None
    if state.previous_solution is not None:
        warm = shift_warm_start(state.previous_solution) if shift else state.previous_solution
    result = solve(x1, x2, svo, cfg, warm_start=warm, opts=opts)
    # clamp once more against round-off in the active-set iterate
    u1 = float(make_feasible(result.seq1[:1], x1.speed, cfg)[0])
    new_state = PlannerState((result.seq1, result.seq2), svo, result)
    return u1, result.seq2, new_state
