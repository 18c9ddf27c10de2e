"""Online SVO estimation by moving-horizon maximum-entropy IRL.

Trajectories are modelled as ``p(r | phi2) ~ exp(-theta(phi2)^T f(r))`` with
features ``f = [l2, l12]`` and ``theta = [cos(phi2), sin(phi2)]``. The
partition function is approximated by its most likely trajectory, so the
per-sample log-likelihood becomes

    theta^T f(r*) - theta^T f(r),    r* = argmin_r theta^T f(r)

whose gradient in ``theta`` is ``E[f] - f_observed`` with ``E[f]``
replaced by the features of the optimized segments. Note the order: with
the cost convention ``exp(-theta^T f)`` the observed features enter with a
negative sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from svo_cav.core import (
    HALF_PI,
    ScenarioConfig,
    TrajectorySegment,
    check_angle,
    phi_from_psi,
    psi_from_phi,
)
from svo_cav.dynamics import step
from svo_cav.hdv import minimize_one_step
from svo_cav.objectives import FeatureVector, features


# beyond this the sigmoid rounds to 0 or 1 and the angle would hit the boundary
PSI_LIMIT = 30.0


class SegmentError(ValueError):
    """A trajectory segment does not satisfy the vehicle dynamics."""


class NoDataError(RuntimeError):
    """Feature statistics were requested from an empty segment buffer."""


@dataclass(frozen=True)
class EstimatorState:
    psi: float
    capacity: int
    eta: float
    segments: tuple[TrajectorySegment, ...] = field(default=())

    @property
    def phi2(self) -> float:
        return phi_from_psi(self.psi)


def initialize(cfg: ScenarioConfig, phi2_init: float | None = None) -> EstimatorState:
    psi = 0.0 if phi2_init is None else psi_from_phi(phi2_init)
    return EstimatorState(psi=psi, capacity=cfg.L, eta=cfg.eta)


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


def check_segment(seg: TrajectorySegment, dt: float) -> None:
    for x, u, x_next, name in ((seg.x1, seg.u1, seg.x1_next, "CAV"), (seg.x2, seg.u2, seg.x2_next, "HDV")):
        expected = step(x, u, dt)
        if not (_close(expected.position, x_next.position) and _close(expected.speed, x_next.speed)):
            raise SegmentError(f"{name} next state {x_next} does not follow from {x} under a={u}")


def push_segment(state: EstimatorState, seg: TrajectorySegment, cfg: ScenarioConfig) -> EstimatorState:
    check_segment(seg, cfg.dt)
    segments = (state.segments + (seg,))[-state.capacity :]
    return replace(state, segments=segments)


def _mean_features(segments, cfg) -> FeatureVector:
    if not segments:
        raise NoDataError("no trajectory segments collected yet")
    f = np.mean([features(seg, cfg).as_array() for seg in segments], axis=0)
    return FeatureVector(float(f[0]), float(f[1]))


def empirical_features(state: EstimatorState, cfg: ScenarioConfig) -> FeatureVector:
    return _mean_features(state.segments, cfg)


def optimized_segment(seg: TrajectorySegment, phi2: float, cfg: ScenarioConfig) -> TrajectorySegment:
    """Replace the HDV action by its cost-minimizing value under ``phi2``.

    The CAV part and the HDV start state are kept.
    """
    check_angle(phi2, "phi2")
    a = minimize_one_step(seg.x1_next.position, seg.x2, phi2, cfg)
    return replace(seg, u2=a, x2_next=step(seg.x2, a, cfg.dt))


def expected_features(state: EstimatorState, phi2: float, cfg: ScenarioConfig) -> FeatureVector:
    if not state.segments:
        raise NoDataError("no trajectory segments collected yet")
    return _mean_features([optimized_segment(seg, phi2, cfg) for seg in state.segments], cfg)


def theta_derivative(psi: float) -> np.ndarray:
    """d theta / d psi for ``theta = [cos phi, sin phi]``, ``phi = (pi/2) sigmoid(psi)``."""
    phi = phi_from_psi(psi)
    sig = phi / HALF_PI
    return np.array([-math.sin(phi), math.cos(phi)]) * HALF_PI * sig * (1.0 - sig)


def feature_gradient(state: EstimatorState, cfg: ScenarioConfig) -> np.ndarray:
    """Gradient of the mean approximate log-likelihood with respect to theta."""
    expected = expected_features(state, state.phi2, cfg).as_array()
    return expected - empirical_features(state, cfg).as_array()


def chain_to_psi(grad_theta, psi: float) -> float:
    return float(np.asarray(grad_theta, dtype=float) @ theta_derivative(psi))


def likelihood_gradient_psi(state: EstimatorState, cfg: ScenarioConfig) -> float:
    return chain_to_psi(feature_gradient(state, cfg), state.psi)


def approximate_log_likelihood(state: EstimatorState, psi: float, cfg: ScenarioConfig) -> float:
    """Mean of ``theta^T f(r*) - theta^T f(r)`` over the buffer; zero when the data are optimal."""
    if not state.segments:
        raise NoDataError("no trajectory segments collected yet")
    theta = np.array([math.cos(phi_from_psi(psi)), math.sin(phi_from_psi(psi))])
    phi2 = phi_from_psi(psi)
    total = 0.0
    for seg in state.segments:
        best = optimized_segment(seg, phi2, cfg)
        total += theta @ (features(best, cfg).as_array() - features(seg, cfg).as_array())
    return float(total / len(state.segments))


def _ascent_step(state: EstimatorState, cfg: ScenarioConfig, safeguard: bool) -> float:
    psi = state.psi
    grad = likelihood_gradient_psi(state, cfg)
    step = state.eta * grad
    if not safeguard:
        return min(max(psi + step, -PSI_LIMIT), PSI_LIMIT)
    base = approximate_log_likelihood(state, psi, cfg)
    for _ in range(40):
        trial = min(max(psi + step, -PSI_LIMIT), PSI_LIMIT)
        if trial == psi:
            return psi
        # Armijo condition on the approximate log-likelihood
        if approximate_log_likelihood(state, trial, cfg) >= base + 1e-4 * grad * (trial - psi):
            return trial
        step *= 0.5
    return psi


def update(
    state: EstimatorState,
    cfg: ScenarioConfig,
    n_inner: int | None = None,
    safeguard: bool = True,
) -> tuple[EstimatorState, float]:
    """Gradient-ascent step(s) on psi; returns the new state and SVO estimate.

    Each step tries ``psi + eta * grad``. With ``safeguard`` the step is
    halved until the approximate log-likelihood of the buffer does not drop,
    which keeps the update stable when barrier features become large close
    to the conflict point. ``n_inner`` defaults to ``cfg.n_inner``. An empty
    buffer leaves the state untouched.
    """
    if not state.segments:
        return state, state.phi2
    repeats = cfg.n_inner if n_inner is None else n_inner
    for _ in range(repeats):
        psi = _ascent_step(state, cfg, safeguard)
        if not math.isfinite(psi):
            break
        state = replace(state, psi=psi)
    return state, state.phi2
