"""Closed-loop merging simulation and result export."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from svo_cav import estimator
from svo_cav.core import ScenarioConfig, TrajectorySegment, VehicleState, default_config
from svo_cav.dynamics import step
from svo_cav.hdv import HdvPolicy, hdv_action
from svo_cav.planner import PlannerState, adapt_cav_svo, plan_step
from svo_cav.solver import SolverError, SolverOptions

log = logging.getLogger(__name__)

PRESETS = {
    "egoistic": math.pi / 12,
    "altruistic": 5 * math.pi / 12,
}

CSV_COLUMNS = ("t", "p1", "v1", "a1", "p2", "v2", "a2", "phi1", "phi2_est", "phi2_true", "potential", "dist")


@dataclass(frozen=True)
class StepRecord:
    t: float
    p1: float
    v1: float
    a1: float
    p2: float
    v2: float
    a2: float
    phi1: float
    phi2_est: float
    phi2_true: float
    potential: float
    dist: float

    def row(self) -> tuple[float, ...]:
        return tuple(getattr(self, name) for name in CSV_COLUMNS)


@dataclass
class SimulationLog:
    dt: float
    records: list[StepRecord] = field(default_factory=list)
    diagnostic: str | None = None
    solver_iterations: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records])

    def crossing_step(self, vehicle: int, threshold: float = 0.0) -> int | None:
        """First logged step at which the vehicle's position is at or past ``threshold``."""
        positions = self.column("p1" if vehicle == 1 else "p2")
        hits = np.flatnonzero(positions >= threshold)
        return int(hits[0]) if hits.size else None

    def first_to_cross(self, threshold: float = 0.0) -> int | None:
        k1, k2 = self.crossing_step(1, threshold), self.crossing_step(2, threshold)
        if k1 is None and k2 is None:
            return None
        if k2 is None or (k1 is not None and k1 < k2):
            return 1
        if k1 is None or k2 < k1:
            return 2
        return 0


@dataclass(frozen=True)
class RunSpec:
    policy: HdvPolicy
    cfg: ScenarioConfig = field(default_factory=default_config)
    x1_0: VehicleState | None = None
    x2_0: VehicleState | None = None
    phi2_init: float | None = None
    max_steps: int = 300
    stop_when_crossed: bool = True
    seed: int | None = 0
    solver_opts: SolverOptions = field(default_factory=SolverOptions)

    def initial_states(self) -> tuple[VehicleState, VehicleState]:
        entry = VehicleState(-self.cfg.Lc, 20.0)
        x1 = self.x1_0 or entry
        x2 = self.x2_0 or entry
        if x1.position < -self.cfg.Lc or x2.position < -self.cfg.Lc:
            log.debug("vehicle starts upstream of the control zone")
        return x1, x2


def both_crossed(x1: VehicleState, x2: VehicleState, cfg: ScenarioConfig) -> bool:
    return x1.position > cfg.r and x2.position > cfg.r


def run(spec: RunSpec) -> SimulationLog:
    """Simulate the merge: estimate, plan, let the human act, integrate, log.

    The planner at step k only sees the estimate built from segments up to
    step k-1. A solver failure ends the run early with ``diagnostic`` set.
    """
    cfg = spec.cfg
    x1, x2 = spec.initial_states()
    est = estimator.initialize(cfg, spec.phi2_init)
    planner = PlannerState()
    rng = np.random.default_rng(spec.seed)
    out = SimulationLog(dt=cfg.dt)
    previous: tuple[VehicleState, VehicleState, float, float] | None = None
    last_u1 = 0.0

    for k in range(spec.max_steps):
        if previous is not None:
            px1, px2, pu1, pu2 = previous
            est = estimator.push_segment(est, TrajectorySegment(px1, px2, x1, x2, pu1, pu2), cfg)
        est, phi2_hat = estimator.update(est, cfg)

        try:
            u1, _, planner = plan_step(x1, x2, phi2_hat, planner, cfg, spec.solver_opts)
        except SolverError as exc:
            out.diagnostic = f"step {k}: {exc}"
            log.error("solver failure: %s", out.diagnostic)
            break
        u2 = hdv_action(spec.policy, x1, x2, last_u1, cfg, rng)

        result = planner.last_result
        out.records.append(StepRecord(
            t=k * cfg.dt,
            p1=x1.position, v1=x1.speed, a1=u1,
            p2=x2.position, v2=x2.speed, a2=u2,
            phi1=adapt_cav_svo(phi2_hat),
            phi2_est=phi2_hat,
            phi2_true=spec.policy.true_phi2,
            potential=result.objective if result is not None else math.nan,
            dist=math.hypot(x1.position, x2.position),
        ))
        out.solver_iterations.append(result.iterations if result is not None else 0)

        previous = (x1, x2, u1, u2)
        x1, x2 = step(x1, u1, cfg.dt), step(x2, u2, cfg.dt)
        last_u1 = u1
        if spec.stop_when_crossed and both_crossed(x1, x2, cfg):
            break
    return out


def _fmt(value: float) -> str:
    return repr(float(value))


def emit_csv(sim_log: SimulationLog, path: str | Path) -> None:
    if not sim_log.records:
        raise ValueError("cannot export an empty simulation log")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in sim_log.records:
            writer.writerow([_fmt(v) for v in rec.row()])


def read_csv(path: str | Path) -> SimulationLog:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        records = [StepRecord(*(float(v) for v in row)) for row in reader if row]
    dt = records[1].t - records[0].t if len(records) > 1 else default_config().dt
    return SimulationLog(dt=dt, records=records)


def emit_snapshot_json(sim_log: SimulationLog, path: str | Path, interval_s: float = 1.0) -> None:
    """Write ``[{t, p1, p2}, ...]`` every ``interval_s`` seconds of the run.

    The position trajectory of an ``n``-step log spans ``t = 0 .. n*dt``; the
    state reached after the last logged step is included.
    """
    if not sim_log.records:
        raise ValueError("cannot export an empty simulation log")
    ratio = interval_s / sim_log.dt
    stride = round(ratio)
    if stride < 1 or abs(ratio - stride) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"interval {interval_s} s is not a multiple of dt={sim_log.dt} s")
    dt = sim_log.dt
    points = [(rec.t, rec.p1, rec.p2) for rec in sim_log.records]
    last = sim_log.records[-1]
    points.append((
        last.t + dt,
        step(VehicleState(last.p1, last.v1), last.a1, dt).position,
        step(VehicleState(last.p2, last.v2), last.a2, dt).position,
    ))
    snapshots = [{"t": round(t, 12), "p1": p1, "p2": p2} for t, p1, p2 in points[::stride]]
    Path(path).write_text(json.dumps(snapshots, indent=1), encoding="utf-8")
