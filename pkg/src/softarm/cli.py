"""Command-line entry point.

Subcommands cover training (nets, Q-table), the reaching and path
protocols, the 3D Jacobian controller, the comparative study, the design
sweep and tip motion primitives. Global flags: --config (plant file),
--seed, --out. All outputs are deterministic for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import json
import os

import numpy as np

from . import confignet as cn
from . import design
from . import harness
from . import jacobian_ctrl as jc
from . import kinematics as kin
from . import plant as pl
from . import qlearn as ql


def _load_specs(args, default_3d: bool = False):
    if args.config:
        specs, is_3d = pl.load_plant_config(args.config)
        return specs, is_3d
    if default_3d:
        return pl.default_specs_3d(), True
    return pl.default_specs_2d(), False


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_train_net(args) -> int:
    specs, _ = _load_specs(args)
    net, net_star = cn.train_segment_nets(specs[0], n_samples=args.samples,
                                          seed=args.seed, epochs=args.epochs)
    out = _outdir(args)
    cn.save_model(net, os.path.join(out, "net.json"))
    cn.save_model(net_star, os.path.join(out, "net_star.json"))
    print(f"net loss {net.final_loss:.6g}  net* loss {net_star.final_loss:.6g}")
    return 0


def cmd_train_q(args) -> int:
    specs, is_3d = _load_specs(args)
    if is_3d:
        raise SystemExit("Q-learning training runs on a 2D plant")
    partition = harness.partition_for(specs)
    actions = ql.full_action_set(len(specs))
    arm = ql.QArm(pl.PlantState.at_rest(specs))
    result = ql.train(arm, partition, actions, seed=args.seed)
    out = _outdir(args)
    ql.save_qtable(result.q, os.path.join(out, "qtable.json"))
    meta = {"outer_iterations": result.outer_iterations,
            "marked": result.q.marked_count,
            "available": int(result.available.sum()),
            "reached_target": result.reached_target}
    with open(os.path.join(out, "train_q.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True)
    print(f"marked {meta['marked']}/{meta['available']} available states "
          f"in {meta['outer_iterations']} outer iterations")
    return 0


def cmd_p2p(args) -> int:
    specs, _ = _load_specs(args)
    config = harness.ExperimentConfig(
        controller=args.controller, disturbance=args.disturbance,
        n_targets=args.targets, seed=args.seed)
    rows = harness.run_p2p(config, specs=specs, out_dir=_outdir(args))
    rate = np.mean([row[-1] for row in rows])
    print(f"{args.controller}: {len(rows)} targets, success rate {rate:.2f}")
    return 0


def cmd_path(args) -> int:
    specs, _ = _load_specs(args)
    rows = harness.run_path(specs=specs, seed=args.seed, out_dir=_outdir(args))
    errs = [row[4] for row in rows]
    print(f"{len(rows)} waypoints, mean error {np.mean(errs):.2f} mm, "
          f"max {np.max(errs):.2f} mm")
    return 0


def cmd_jacobian_run(args) -> int:
    specs, is_3d = _load_specs(args, default_3d=True)
    if not is_3d:
        raise SystemExit("the Jacobian controller drives the 3D plant")
    single_jacs = jc.init_single_jacobians(specs)
    rng = np.random.default_rng(args.seed)
    out = _outdir(args)
    rows = []
    for g in range(args.goals):
        state = pl.PlantState.at_rest(specs, is_3d=True)
        goal_state = pl.PlantState.at_rest(specs, is_3d=True)
        pose = goal_state.pose.copy()
        for i, s in enumerate(specs):
            # sample the total bend angle; the achievable curvature drops
            # as the segment lengthens
            theta = rng.uniform(0.2, 0.8) * s.max_curvature * s.rest_length
            phi = rng.uniform(0.0, 2.0 * np.pi)
            l = rng.uniform(s.rest_length, s.max_length)
            k = theta / l
            pose[i] = [k * np.cos(phi), k * np.sin(phi), l]
        goal_state.pose = pose
        T_goal = goal_state.tip_transform()
        report, _ = jc.run_controller(state, T_goal, single_jacs)
        rows.append((g, report.iterations, report.final_pos,
                     report.rot_errors_deg[-1], report.converged))
    harness._write_csv(os.path.join(out, "jacobian.csv"),
                       ["goal", "iterations", "final_pos_error",
                        "final_rot_error_deg", "converged"], rows)
    rate = np.mean([r[-1] for r in rows])
    print(f"{args.goals} goals, convergence rate {rate:.2f}")
    return 0


def cmd_compare(args) -> int:
    specs, _ = _load_specs(args)
    result = harness.run_comparative(specs=specs, n_targets=args.targets,
                                     seed=args.seed, out_dir=_outdir(args))
    with open(os.path.join(args.out, "summary.txt")) as fh:
        print(fh.read(), end="")
    return 0


def cmd_design_sweep(args) -> int:
    surface = design.sweep()
    out = _outdir(args)
    rows = [(w, d, surface.flexibility[i, j], surface.load[i, j])
            for i, w in enumerate(surface.w_grid)
            for j, d in enumerate(surface.d_grid)]
    harness._write_csv(os.path.join(out, "sweep.csv"),
                       ["wall_mm", "groove_mm", "flexibility", "load_Nm"], rows)
    feasible = design.feasible_region(surface, args.f_min, args.m_min)
    harness._write_csv(os.path.join(out, "feasible.csv"),
                       ["wall_mm", "groove_mm"], feasible)
    print(f"{len(feasible)} feasible grid points at "
          f"f >= {args.f_min}, M >= {args.m_min} N*m")
    return 0


def cmd_atom(args) -> int:
    specs, is_3d = _load_specs(args, default_3d=True)
    if not is_3d:
        raise SystemExit("tip motion primitives drive the 3D plant")
    single_jacs = jc.init_single_jacobians(specs)
    state = pl.PlantState.at_rest(specs, is_3d=True)
    rail = None
    if args.rail:
        vals = [float(v) for v in args.rail.split(",")]
        if len(vals) != 6:
            raise SystemExit("--rail expects px,py,pz,ux,uy,uz")
        rail = (vals[:3], vals[3:])
    result, _ = harness.atom_behavior(state, single_jacs, args.direction,
                                      args.magnitude, steps=args.steps,
                                      rail=rail)
    out = _outdir(args)
    rows = [(i, p[0], p[1], p[2], a)
            for i, (p, a) in enumerate(zip(result.positions, result.rot_angles))]
    harness._write_csv(os.path.join(out, "atom.csv"),
                       ["step", "x", "y", "z", "rot_angle_rad"], rows)
    delta = result.positions[-1] - result.positions[0]
    print(f"{args.direction}: tip moved ({delta[0]:.2f}, {delta[1]:.2f}, "
          f"{delta[2]:.2f}) mm over {args.steps} steps")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="softarm",
        description="Soft continuum arm simulation workbench")
    parser.add_argument("--config", default=None, help="plant config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-net", help="train the per-segment pressure nets")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--epochs", type=int, default=500)
    p.set_defaults(func=cmd_train_net)

    p = sub.add_parser("train-q", help="train the tabular Q controller")
    p.set_defaults(func=cmd_train_q)

    p = sub.add_parser("p2p", help="point-to-point reaching protocol")
    p.add_argument("--controller", choices=harness.CONTROLLERS,
                   default="model-based")
    p.add_argument("--disturbance", choices=harness.DISTURBANCE_GROUPS,
                   default="free")
    p.add_argument("--targets", type=int, default=20)
    p.set_defaults(func=cmd_p2p)

    p = sub.add_parser("path", help="waypoint path tracking protocol")
    p.set_defaults(func=cmd_path)

    p = sub.add_parser("jacobian-run", help="3D estimated-Jacobian reaching")
    p.add_argument("--goals", type=int, default=10)
    p.set_defaults(func=cmd_jacobian_run)

    p = sub.add_parser("compare", help="three-controller comparative study")
    p.add_argument("--targets", type=int, default=20)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("design-sweep", help="wall/groove design sweep")
    p.add_argument("--f-min", type=float, default=0.15)
    p.add_argument("--m-min", type=float, default=2.3)
    p.set_defaults(func=cmd_design_sweep)

    p = sub.add_parser("atom", help="tip motion primitive on the 3D arm")
    p.add_argument("--direction", choices=harness.ATOM_DIRECTIONS,
                   required=True)
    p.add_argument("--magnitude", type=float, default=10.0)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--rail", default=None,
                   help="px,py,pz,ux,uy,uz line constraint for the goal")
    p.set_defaults(func=cmd_atom)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
