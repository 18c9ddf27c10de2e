import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from oracles import barrier_ref, grid_argmin, hdv_one_step_ref, step_ref
from svo_cav.core import TrajectorySegment, VehicleState, default_config, phi_from_psi
from svo_cav.dynamics import step
from svo_cav.estimator import (
    EstimatorState,
    NoDataError,
    SegmentError,
    approximate_log_likelihood,
    chain_to_psi,
    empirical_features,
    expected_features,
    feature_gradient,
    initialize,
    likelihood_gradient_psi,
    optimized_segment,
    push_segment,
    update,
)
from svo_cav.hdv import HdvPolicy, hdv_action, minimize_one_step
from svo_cav.objectives import features
from svo_cav.scenario import RunSpec, run


def make_segment(p1, v1, u1, p2, v2, u2, dt=0.1):
    x1, x2 = VehicleState(p1, v1), VehicleState(p2, v2)
    return TrajectorySegment(x1, x2, step(x1, u1, dt), step(x2, u2, dt), u1, u2)


def random_segment(rng, near=True):
    span = 40 if near else 120
    return make_segment(rng.uniform(-span, -5), rng.uniform(5, 30), rng.uniform(-10, 5),
                        rng.uniform(-span, -5), rng.uniform(5, 30), rng.uniform(-10, 5))


def state_with(segments, cfg, psi=0.0):
    state = initialize(cfg)
    state = replace(state, psi=psi)
    for seg in segments:
        state = push_segment(state, seg, cfg)
    return state


def test_initialize(cfg):
    assert initialize(cfg).phi2 == pytest.approx(math.pi / 4)
    assert initialize(cfg, math.pi / 6).phi2 == pytest.approx(math.pi / 6, abs=1e-10)
    with pytest.raises(ValueError):
        initialize(cfg, math.pi / 2)
    assert initialize(cfg).capacity == cfg.L


def test_push_and_evict(cfg):
    rng = np.random.default_rng(0)
    state = initialize(cfg)
    first = random_segment(rng)
    state = push_segment(state, first, cfg)
    assert len(state.segments) == 1
    for _ in range(cfg.L - 1):
        state = push_segment(state, random_segment(rng), cfg)
    assert len(state.segments) == cfg.L
    newest = random_segment(rng)
    state = push_segment(state, newest, cfg)
    assert len(state.segments) == cfg.L
    assert first not in state.segments and state.segments[-1] is newest


def test_push_rejects_inconsistent(cfg):
    seg = make_segment(-50, 20, 1.0, -40, 20, 0.0)
    bad = replace(seg, x2_next=VehicleState(seg.x2_next.position + 0.01, seg.x2_next.speed))
    with pytest.raises(SegmentError):
        push_segment(initialize(cfg), bad, cfg)


def test_empirical_features(cfg):
    seg = make_segment(-50, 20, 1.0, -40, 20, 0.0)
    state = state_with([seg], cfg)
    np.testing.assert_allclose(empirical_features(state, cfg).as_array(), features(seg, cfg).as_array())
    with pytest.raises(NoDataError):
        empirical_features(initialize(cfg), cfg)
    with pytest.raises(NoDataError):
        expected_features(initialize(cfg), 0.5, cfg)
    with pytest.raises(NoDataError):
        likelihood_gradient_psi(initialize(cfg), cfg)


def test_empirical_mean_of_known_features():
    # l2 = w3 a^2 with speed at the limit; l12 = w5 / D via positions: (0, 2) and (4, 6)
    cfg = default_config().with_overrides(w5=1.0, r=1.0, barrier_epsilon=1e-6)
    segs = []
    for l2, l12 in ((0.0, 2.0), (4.0, 6.0)):
        a2 = math.sqrt(l2)
        v2 = cfg.v_max - cfg.dt * a2
        # start so that the HDV lands exactly on the conflict point
        x2 = VehicleState(-(cfg.dt * v2 + 0.5 * cfg.dt**2 * a2), v2)
        x2n = step(x2, a2, cfg.dt)
        p1n = math.sqrt(1.0 / l12 + cfg.r**2 - x2n.position**2)
        x1 = VehicleState(p1n - cfg.dt * 10.0, 10.0)
        segs.append(TrajectorySegment(x1, x2, step(x1, 0.0, cfg.dt), x2n, 0.0, a2))
    state = state_with(segs, cfg)
    np.testing.assert_allclose(empirical_features(state, cfg).as_array(), [2.0, 4.0], rtol=1e-9)


def test_optimized_segment_egoistic_limit(cfg):
    far = VehicleState(-1e6, 20.0)
    x2 = VehicleState(-100.0, 29.0)
    seg = TrajectorySegment(far, x2, step(far, 0.0, cfg.dt), step(x2, 0.0, cfg.dt), 0.0, 0.0)
    opt = optimized_segment(seg, 1e-9, cfg)
    closed_form = cfg.w4 * cfg.dt * (cfg.v_max - 29.0) / (cfg.w3 + cfg.w4 * cfg.dt**2)
    assert closed_form == pytest.approx(0.5 / 1.05)
    assert opt.u2 == pytest.approx(closed_form, abs=1e-6)
    assert opt.x2_next == step(x2, opt.u2, cfg.dt)
    assert (opt.x1, opt.x1_next, opt.u1, opt.x2) == (seg.x1, seg.x1_next, seg.u1, seg.x2)


def test_optimized_segment_altruistic_decelerates(cfg):
    seg = make_segment(-12.0, 10.0, 0.0, -14.0, 12.0, 0.0)
    phi2 = math.pi / 2 - 1e-6
    opt = optimized_segment(seg, phi2, cfg)
    oracle = grid_argmin(lambda a: hdv_one_step_ref(a, seg.x1_next.position, -14.0, 12.0, phi2, cfg), -10, 5, 1e-4)
    assert opt.u2 < 0 and oracle < 0
    cost = lambda a: hdv_one_step_ref(a, seg.x1_next.position, -14.0, 12.0, phi2, cfg)  # noqa: E731
    assert cost(opt.u2) <= cost(oracle) + 1e-9 * abs(cost(oracle))


def test_optimized_segment_beats_random_alternatives(cfg):
    rng = np.random.default_rng(5)
    for _ in range(20):
        seg = random_segment(rng)
        phi2 = rng.uniform(0.05, 1.52)
        opt = optimized_segment(seg, phi2, cfg)
        cost = lambda a: hdv_one_step_ref(a, seg.x1_next.position, seg.x2.position, seg.x2.speed, phi2, cfg)  # noqa: E731
        best = cost(opt.u2)
        alternatives = np.clip(np.concatenate([rng.uniform(-50, 50, 900), opt.u2 + rng.normal(0, 0.1, 100)]), -50, 50)
        assert all(best <= cost(a) + 1e-9 * abs(best) for a in alternatives)


def test_expected_features_properties(cfg):
    rng = np.random.default_rng(6)
    segs = [random_segment(rng) for _ in range(5)]
    state = state_with(segs, cfg)
    phi2 = 0.9
    theta = np.array([math.cos(phi2), math.sin(phi2)])
    exp = expected_features(state, phi2, cfg).as_array()
    emp = empirical_features(state, cfg).as_array()
    assert theta @ exp <= theta @ emp + 1e-9 * abs(theta @ emp)
    per = [features(optimized_segment(s, phi2, cfg), cfg).as_array() for s in segs]
    np.testing.assert_allclose(exp, np.mean(per, axis=0), rtol=1e-12)
    # a buffer whose action already is optimal is a fixed point
    opt = optimized_segment(segs[0], phi2, cfg)
    single = state_with([opt], cfg)
    np.testing.assert_allclose(expected_features(single, phi2, cfg).as_array(),
                               empirical_features(single, cfg).as_array(), rtol=1e-9)


def test_chain_rule_example():
    g1, g2 = 3.0, -1.5
    expected = (math.pi / 8) * (math.sqrt(2) / 2) * (g2 - g1)
    assert chain_to_psi([g1, g2], 0.0) == pytest.approx(expected, rel=1e-14)


def test_matched_features_zero_gradient(cfg):
    seg = optimized_segment(make_segment(-30, 20, 0.5, -25, 18, 0.0), math.pi / 4, cfg)
    state = state_with([seg], cfg)
    np.testing.assert_allclose(feature_gradient(state, cfg), 0.0, atol=1e-6)
    assert likelihood_gradient_psi(state, cfg) == pytest.approx(0.0, abs=1e-6)
    new_state, phi2 = update(state, cfg)
    assert phi2 == pytest.approx(math.pi / 4, abs=1e-6)


def _likelihood_oracle(segments, psi, cfg):
    """Mean over segments of theta^T (f(best) - f(observed)), best found with scipy."""
    phi = math.pi / 2 / (1 + math.exp(-psi))
    c, s = math.cos(phi), math.sin(phi)
    total = 0.0
    for seg in segments:
        p1n = seg.x1_next.position
        cost = lambda a: hdv_one_step_ref(a, p1n, seg.x2.position, seg.x2.speed, phi, cfg)  # noqa: E731
        grid = np.linspace(-50, 50, 2001)
        a0 = grid[int(np.argmin([cost(a) for a in grid]))]
        res = minimize_scalar(cost, bounds=(max(a0 - 0.1, -50), min(a0 + 0.1, 50)), method="bounded",
                              options={"xatol": 1e-10})
        p2o, v2o = seg.x2_next.position, seg.x2_next.speed
        observed = c * (cfg.w3 * seg.u2**2 + cfg.w4 * (v2o - cfg.v_max) ** 2) + s * barrier_ref(
            p1n**2 + p2o**2 - cfg.r**2, cfg)
        total += res.fun - observed
    return total / len(segments)


def test_gradient_matches_finite_difference_oracle(cfg):
    rng = np.random.default_rng(8)
    h = 1e-5
    for _ in range(8):
        segs = [random_segment(rng, near=False) for _ in range(int(rng.integers(1, 6)))]
        psi = rng.uniform(-2, 2)
        state = state_with(segs, cfg, psi)
        fd = (_likelihood_oracle(segs, psi + h, cfg) - _likelihood_oracle(segs, psi - h, cfg)) / (2 * h)
        grad = likelihood_gradient_psi(state, cfg)
        assert grad == pytest.approx(fd, rel=1e-3, abs=1e-6)
        assert approximate_log_likelihood(state, psi, cfg) == pytest.approx(
            _likelihood_oracle(segs, psi, cfg), rel=1e-8, abs=1e-8)


def _sign_buffers(cfg, phi_observed):
    """Buffers whose HDV acts optimally for ``phi_observed`` near the conflict point."""
    segs = []
    for p1, p2 in ((-15.0, -18.0), (-20.0, -16.0), (-12.0, -22.0)):
        x1, x2 = VehicleState(p1, 12.0), VehicleState(p2, 14.0)
        x1n = step(x1, 0.0, cfg.dt)
        a = minimize_one_step(x1n.position, x2, phi_observed, cfg)
        segs.append(TrajectorySegment(x1, x2, x1n, step(x2, a, cfg.dt), 0.0, a))
    return segs


@pytest.mark.parametrize("safeguard", [True, False])
def test_gradient_sign_sanity(cfg, safeguard):
    cooperative = state_with(_sign_buffers(cfg, 5 * math.pi / 12), cfg)
    f_obs = empirical_features(cooperative, cfg)
    f_pred = expected_features(cooperative, math.pi / 4, cfg)
    assert f_obs.f_coop < f_pred.f_coop
    _, phi_up = update(cooperative, cfg, safeguard=safeguard)
    assert phi_up > math.pi / 4

    selfish = state_with(_sign_buffers(cfg, math.pi / 12), cfg)
    assert empirical_features(selfish, cfg).f_coop > expected_features(selfish, math.pi / 4, cfg).f_coop
    _, phi_down = update(selfish, cfg, safeguard=safeguard)
    assert phi_down < math.pi / 4


def test_zero_learning_rate(cfg):
    state = state_with(_sign_buffers(cfg, 1.3), cfg)
    state = EstimatorState(state.psi, state.capacity, 0.0, state.segments)
    new_state, phi2 = update(state, cfg)
    assert new_state.psi == state.psi and phi2 == state.phi2


def test_empty_buffer_update_is_noop(cfg):
    state = initialize(cfg, 0.4)
    assert update(state, cfg) == (state, state.phi2)


def test_update_deterministic(cfg):
    state = state_with(_sign_buffers(cfg, 1.2), cfg)
    assert update(state, cfg) == update(state, cfg)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(-5, 5), st.integers(1, 5))
def test_estimate_stays_inside_interval(seed, psi, repeats):
    cfg = default_config().with_overrides(eta=50.0)
    rng = np.random.default_rng(seed)
    state = state_with([random_segment(rng) for _ in range(3)], cfg, psi)
    state, phi2 = update(state, cfg, n_inner=repeats, safeguard=False)
    assert 0.0 < phi2 < math.pi / 2
    t = np.array([math.cos(phi2), math.sin(phi2)])
    assert t @ t == pytest.approx(1.0, abs=1e-12)


def test_n_inner_repeats(cfg):
    state = state_with(_sign_buffers(cfg, 1.2), cfg)
    once, _ = update(state, cfg, n_inner=1)
    twice, _ = update(state, cfg, n_inner=2)
    again, _ = update(once, cfg, n_inner=1)
    assert twice.psi == again.psi


@pytest.mark.parametrize("entry", [-100.0, -80.0, -60.0])
def test_closed_loop_convergence_pi_over_3(entry):
    # far from the conflict point a one-step driver reveals almost nothing about
    # its SVO, so the 50 updates start inside the informative part of the zone
    x0 = VehicleState(entry, 20.0)
    sim = run(RunSpec(HdvPolicy(math.pi / 3), x1_0=x0, x2_0=x0, max_steps=51, stop_when_crossed=False))
    est = sim.column("phi2_est")
    assert est[0] == phi_from_psi(0.0)
    assert abs(est[50] - math.pi / 3) < 0.1
    assert np.all((est > 0) & (est < math.pi / 2))


def test_step_ref_consistent_with_dynamics():
    assert step_ref(1.0, 2.0, 3.0, 0.1) == pytest.approx(
        (step(VehicleState(1.0, 2.0), 3.0, 0.1).position, step(VehicleState(1.0, 2.0), 3.0, 0.1).speed))
    assert hdv_action(HdvPolicy(0.5), VehicleState(-1e5, 30), VehicleState(-1e5, 30), 0.0,
                      default_config()) == 0.0
