"""Command-line entry point: ``svo-cav simulate | estimate-replay | grid``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from svo_cav import estimator
from svo_cav.core import ConfigError, ScenarioConfig, TrajectorySegment, VehicleState, default_config, load_config
from svo_cav.hdv import HdvPolicy
from svo_cav.scenario import PRESETS, RunSpec, emit_csv, emit_snapshot_json, read_csv, run

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3


def parse_svo(text: str) -> float:
    """Accept a radian value or ``preset:<name>``."""
    if text.startswith("preset:"):
        name = text.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return PRESETS[name]
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"SVO must be radians or preset:<name>, got {text!r}") from None
    if not 0.0 < value < 0.5 * math.pi:
        raise ConfigError(f"SVO {value} outside (0, pi/2)")
    return value


def _config(path: str | None) -> ScenarioConfig:
    return load_config(path) if path else default_config()


def _summary(sim_log) -> dict:
    dist = sim_log.column("dist")
    return {
        "steps": len(sim_log),
        "first_to_cross": {1: "CAV", 2: "HDV", 0: "tie", None: "none"}[sim_log.first_to_cross()],
        "min_dist": float(dist.min()) if len(dist) else math.nan,
        "final_phi2_est": float(sim_log.records[-1].phi2_est) if sim_log.records else math.nan,
    }


def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    phi2 = parse_svo(args.hdv_svo)
    spec = RunSpec(HdvPolicy(phi2, horizon=cfg.hdv_horizon), cfg, max_steps=args.max_steps, seed=args.seed)
    sim_log = run(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if sim_log.records:
        emit_csv(sim_log, out / "log.csv")
        emit_snapshot_json(sim_log, out / "snapshots.json", 1.0)
    s = _summary(sim_log)
    print(f"steps={s['steps']} first={s['first_to_cross']} min_dist={s['min_dist']:.3f} "
          f"phi2_est={s['final_phi2_est']:.4f} out={out}")
    if sim_log.diagnostic:
        print(f"solver failure: {sim_log.diagnostic}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_estimate_replay(args) -> int:
    cfg = _config(args.config)
    sim_log = read_csv(args.log)
    state = estimator.initialize(cfg, args.phi2_init)
    print("t,phi2_est,phi2_logged")
    previous = None
    for rec in sim_log.records:
        x1, x2 = VehicleState(rec.p1, rec.v1), VehicleState(rec.p2, rec.v2)
        if previous is not None:
            px1, px2, pu1, pu2 = previous
            state = estimator.push_segment(state, TrajectorySegment(px1, px2, x1, x2, pu1, pu2), cfg)
        state, phi2 = estimator.update(state, cfg)
        print(f"{rec.t!r},{phi2!r},{rec.phi2_est!r}")
        previous = (x1, x2, rec.a1, rec.a2)
    return EXIT_OK


def _grid_job(job):
    phi2, cfg, max_steps = job
    sim_log = run(RunSpec(HdvPolicy(phi2, horizon=cfg.hdv_horizon), cfg, max_steps=max_steps))
    s = _summary(sim_log)
    return phi2, s, sim_log.diagnostic


def cmd_grid(args) -> int:
    cfg = _config(args.config)
    values = [parse_svo(v) for v in args.svo_list]
    jobs = [(phi2, cfg, args.max_steps) for phi2 in values]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_grid_job, jobs))
    else:
        results = [_grid_job(job) for job in jobs]
    print("phi2_true,first_to_cross,min_dist,phi2_est,abs_error")
    failed = False
    for phi2, s, diagnostic in results:
        print(f"{phi2:.6f},{s['first_to_cross']},{s['min_dist']:.4f},"
              f"{s['final_phi2_est']:.6f},{abs(s['final_phi2_est'] - phi2):.6f}")
        failed |= diagnostic is not None
    return EXIT_SOLVER if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svo-cav", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed-loop merge and write log.csv / snapshots.json")
    p.add_argument("--config")
    p.add_argument("--hdv-svo", required=True, help="radians or preset:egoistic|altruistic")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=300)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-replay", help="re-run the SVO estimator over a logged run")
    p.add_argument("--log", required=True)
    p.add_argument("--config")
    p.add_argument("--phi2-init", type=float, default=None)
    p.set_defaults(func=cmd_estimate_replay)

    p = sub.add_parser("grid", help="sweep true HDV SVO values")
    p.add_argument("--svo-list", nargs="+", required=True)
    p.add_argument("--config")
    p.add_argument("--max-steps", type=int, default=300)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
