"""Local minimizer for the joint horizon problem.

The decision vector is ``[seq1, seq2]`` (CAV then HDV accelerations). Only
the CAV is constrained: acceleration bounds per stage and speed bounds on the
rolled-out speeds. Because ``v_{k+1} = v_0 + dt * sum(a_0..a_k)``, the speed
bounds are linear in the accelerations, so the whole feasible set is a
polyhedron ``A z <= b``.

The minimizer is a primal active-set method with Newton directions
(eigenvalue-modified Hessian) and Armijo backtracking, started from a point
made feasible by a forward sweep that clamps each stage acceleration into the
interval that keeps the next speed within bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from svo_cav.core import ScenarioConfig, SvoPair, VehicleState
from svo_cav.objectives import HorizonObjective, player_weights, potential_weights


class SolverError(RuntimeError):
    """The solver could not start (non-finite objective or malformed input)."""


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-6
    step_tolerance: float = 1e-12
    line_search_shrink: float = 0.5
    armijo_constant: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        if not (0 < self.gradient_tolerance < 1 and 0 < self.step_tolerance < 1):
            raise ValueError("tolerances must lie in (0, 1)")
        if not (0 < self.line_search_shrink < 1 and 0 < self.armijo_constant < 1):
            raise ValueError("line search constants must lie in (0, 1)")


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    kkt_residual: float
    history: list[float] = field(default_factory=list)


@dataclass
class SolverResult:
    seq1: np.ndarray
    seq2: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    history: list[float] = field(default_factory=list)


def _modified_hessian(Hm: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (Hm + Hm.T))
    floor = 1e-10 * max(1.0, float(np.max(np.abs(w))))
    w = np.maximum(np.abs(w), floor)
    return (V * w) @ V.T


def _multipliers(g: np.ndarray, Aw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares multipliers for ``g + Aw^T lam = 0`` and the residual."""
    if Aw.shape[0] == 0:
        return np.zeros(0), g.copy()
    lam = np.linalg.lstsq(Aw.T, -g, rcond=None)[0]
    return lam, g + Aw.T @ lam


def _initial_working_set(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> list[int]:
    slack = b - A @ x
    working: list[int] = []
    for i in np.flatnonzero(slack <= 1e-9 * (1.0 + np.abs(b))):
        trial = A[working + [int(i)]]
        if np.linalg.matrix_rank(trial) == len(working) + 1:
            working.append(int(i))
    return working


def minimize_linear_constrained(
    evaluate: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    x0: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    opts: SolverOptions = SolverOptions(),
) -> MinimizeResult:
    """Minimize a smooth function subject to ``A x <= b`` from a feasible ``x0``.

    ``evaluate(x)`` returns ``(f, grad, hess)``. Stationarity is declared when
    the gradient, corrected by least-squares multipliers of the working set,
    has infinity norm at most ``gradient_tolerance * max(1, |grad|_inf)`` and
    no multiplier is negative beyond that tolerance. The tolerance is thus
    absolute near unconstrained optima and relative where large gradients
    are balanced by active constraints.
    """
    x = np.array(x0, dtype=float)
    f, g, Hm = evaluate(x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise SolverError(f"non-finite objective at the initial point (f={f})")
    m = A.shape[0]
    working = _initial_working_set(A, b, x) if m else []
    history = [f]
    iterations = 0
    converged = False
    kkt = math.inf

    while True:
        Aw = A[working] if working else np.zeros((0, x.size))
        lam, resid = _multipliers(g, Aw)
        tol = opts.gradient_tolerance * max(1.0, float(np.max(np.abs(g))))
        stationarity = float(np.max(np.abs(resid))) if resid.size else 0.0
        worst = float(-lam.min()) if lam.size else 0.0
        kkt = max(stationarity, worst, 0.0)

        if stationarity <= tol:
            if worst <= tol:
                converged = True
                break
            if iterations >= opts.max_iterations:
                break
            working.pop(int(np.argmin(lam)))
            iterations += 1
            continue
        if iterations >= opts.max_iterations:
            break

        Hr = _modified_hessian(Hm)
        nw = len(working)
        if nw:
            K = np.zeros((x.size + nw, x.size + nw))
            K[: x.size, : x.size] = Hr
            K[: x.size, x.size :] = Aw.T
            K[x.size :, : x.size] = Aw
            rhs = np.concatenate([-g, np.zeros(nw)])
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            p = sol[: x.size]
        else:
            p = np.linalg.solve(Hr, -g)

        slope = float(g @ p)
        if slope >= 0:
            # numerical breakdown of the Newton direction; use steepest descent in the subspace
            p = -resid
            slope = float(g @ p)

        alpha_max = math.inf
        blocking = -1
        if m:
            Ap = A @ p
            slack = np.maximum(b - A @ x, 0.0)
            for i in np.flatnonzero(Ap > 1e-14 * (1.0 + np.abs(b))):
                if i in working:
                    continue
                ratio = slack[i] / Ap[i]
                if ratio < alpha_max:
                    alpha_max, blocking = ratio, int(i)

        alpha = min(1.0, alpha_max)
        hit_block = alpha_max <= 1.0
        accepted = False
        while alpha * float(np.max(np.abs(p))) > opts.step_tolerance * (1.0 + float(np.max(np.abs(x)))):
            trial = x + alpha * p
            f_trial, g_trial, H_trial = evaluate(trial)
            if math.isfinite(f_trial) and f_trial <= f + opts.armijo_constant * alpha * slope:
                accepted = True
                break
            alpha *= opts.line_search_shrink
            hit_block = False

        iterations += 1
        if not accepted:
            # a constraint blocks the step within the step tolerance (degenerate
            # vertex): take it into the working set instead of giving up
            if blocking >= 0 and alpha_max * float(np.max(np.abs(p))) <= opts.step_tolerance * (
                1.0 + float(np.max(np.abs(x)))
            ):
                working.append(blocking)
                continue
            break
        x, f, g, Hm = trial, f_trial, g_trial, H_trial
        history.append(f)
        if hit_block and blocking >= 0:
            working.append(blocking)

    return MinimizeResult(x, float(f), iterations, converged, kkt, history)


def effective_speed_bounds(v0: float, cfg: ScenarioConfig, H: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-stage speed bounds, relaxed to the reachable range when the start speed is infeasible."""
    k = np.arange(1, H + 1)
    v_hi = np.maximum(cfg.v_max, v0 + cfg.dt * cfg.u_min * k)
    v_lo = np.minimum(cfg.v_min, v0 + cfg.dt * cfg.u_max * k)
    return v_lo, v_hi


def make_feasible(seq, v0: float, cfg: ScenarioConfig) -> np.ndarray:
    """Forward sweep clamping each acceleration to its speed- and input-feasible interval."""
    seq = np.array(seq, dtype=float)
    v_lo, v_hi = effective_speed_bounds(v0, cfg, seq.size)
    v = v0
    for k in range(seq.size):
        lo = max(cfg.u_min, (v_lo[k] - v) / cfg.dt)
        hi = min(cfg.u_max, (v_hi[k] - v) / cfg.dt)
        seq[k] = min(max(seq[k], lo), hi)
        v = v + cfg.dt * seq[k]
    return seq


def cav_constraints(v0: float, cfg: ScenarioConfig, n_total: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``A z <= b`` for the CAV block (the first ``H`` entries of ``z``)."""
    H = cfg.H
    eye = np.eye(H)
    cum = cfg.dt * np.tril(np.ones((H, H)))
    v_lo, v_hi = effective_speed_bounds(v0, cfg, H)
    A = np.zeros((4 * H, n_total))
    A[:H, :H] = eye
    A[H : 2 * H, :H] = -eye
    A[2 * H : 3 * H, :H] = cum
    A[3 * H :, :H] = -cum
    b = np.concatenate([
        np.full(H, cfg.u_max),
        np.full(H, -cfg.u_min),
        v_hi - v0,
        v0 - v_lo,
    ])
    return A, b


def _check_sequence(seq, H: int, name: str) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    if seq.shape != (H,):
        raise SolverError(f"{name} must have length H={H}, got shape {seq.shape}")
    if not np.all(np.isfinite(seq)):
        raise SolverError(f"{name} contains non-finite values")
    return seq


def solve(
    x1_0: VehicleState,
    x2_0: VehicleState,
    svo: SvoPair,
    cfg: ScenarioConfig,
    warm_start=None,
    opts: SolverOptions = SolverOptions(),
) -> SolverResult:
    """Minimize the SVO-weighted potential over both control sequences."""
    H = cfg.H
    if warm_start is None:
        seq1, seq2 = np.zeros(H), np.zeros(H)
    else:
        seq1 = _check_sequence(warm_start[0], H, "warm-start seq1")
        seq2 = _check_sequence(warm_start[1], H, "warm-start seq2")
    z0 = np.concatenate([make_feasible(seq1, x1_0.speed, cfg), seq2])
    objective = HorizonObjective(x1_0, x2_0, potential_weights(svo), cfg)
    A, b = cav_constraints(x1_0.speed, cfg, 2 * H)
    res = minimize_linear_constrained(objective.evaluate, z0, A, b, opts)
    seq1 = make_feasible(res.x[:H], x1_0.speed, cfg)
    return SolverResult(
        seq1, res.x[H:].copy(), res.value, res.iterations, res.converged, res.kkt_residual, res.history
    )


def best_response(
    player: int,
    frozen_seq,
    x1_0: VehicleState,
    x2_0: VehicleState,
    svo: SvoPair,
    cfg: ScenarioConfig,
    opts: SolverOptions = SolverOptions(),
    initial=None,
) -> np.ndarray:
    """Minimize one player's own horizon objective with the other sequence held fixed.

    ``initial`` seeds the player's own sequence (zeros by default). The CAV
    (player 1) keeps its input and speed constraints, the HDV is unconstrained.
    """
    H = cfg.H
    frozen = _check_sequence(frozen_seq, H, "frozen_seq")
    own0 = np.zeros(H) if initial is None else _check_sequence(initial, H, "initial")
    objective = HorizonObjective(x1_0, x2_0, player_weights(player, svo), cfg)
    if player == 1:
        sl = slice(0, H)

        def assemble(own):
            return np.concatenate([own, frozen])

        own0 = make_feasible(own0, x1_0.speed, cfg)
        A, b = cav_constraints(x1_0.speed, cfg, H)
    else:
        sl = slice(H, 2 * H)

        def assemble(own):
            return np.concatenate([frozen, own])

        A, b = np.zeros((0, H)), np.zeros(0)

    def evaluate(own):
        f, g, Hm = objective.evaluate(assemble(own))
        return f, g[sl], Hm[sl, sl]

    res = minimize_linear_constrained(evaluate, own0, A, b, opts)
    own = res.x
    if player == 1:
        own = make_feasible(own, x1_0.speed, cfg)
    return own
