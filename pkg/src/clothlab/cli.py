"""Command-line entry point.

Subcommands: collect, train-diffusion, train-rssm, plan, eval, serve,
gradcheck. Exit status 0 on success, 1 with a diagnostic line on errors,
2 on usage problems.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config, save_config
from .errors import ClothLabError


def _common(parser):
    parser.add_argument("--config", help="experiment configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override the base seed")
    parser.add_argument("--out", default=None, help="output directory")


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    if args.seed is not None:
        cfg.mixture.seed = args.seed
        cfg.planner.seed = args.seed
        cfg.eval_seeds = tuple(args.seed + i for i in range(len(cfg.eval_seeds)))
    if args.out:
        cfg.out_dir = args.out
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def cmd_collect(args) -> int:
    from .dataset import collect, write_dataset
    from .diffusion import DiffusionPolicy

    cfg = _load(args)
    policy = None
    if cfg.mixture.diffusion_ratio > 0.0:
        if not args.policy:
            print("error: mixture.diffusion_ratio > 0 needs --policy <checkpoint>",
                  file=sys.stderr)
            return 1
        policy = DiffusionPolicy.load(args.policy)
    cfg.mixture.garments = tuple(cfg.garments)
    cfg.mixture.resolution = cfg.resolution
    records = collect(cfg.mixture, policy, progress=True)
    out_path = os.path.join(cfg.out_dir, "dataset.lgnt")
    write_dataset(records, out_path)
    print(f"wrote {len(records)} trajectories to {out_path}")
    return 0


def cmd_train_diffusion(args) -> int:
    from .dataset import demos_from_records, read_dataset
    from .diffusion import DiffusionConfig, train_ddpm
    from .harness import ScriptedCornerPolicy, run_episode
    from .env import ClothEnv

    cfg = _load(args)
    if args.demos:
        records = read_dataset(args.demos)
        print(f"loaded {len(records)} demonstration trajectories from {args.demos}")
    else:
        # no human demos available: bootstrap from the scripted corner oracle
        print("no --demos given; generating %d scripted square-garment episodes"
              % args.bootstrap_episodes)
        env = ClothEnv("square", resolution=cfg.resolution, sim_params=cfg.sim,
                       window=cfg.window, reward_params=cfg.rewards, iou_params=cfg.iou)
        policy = ScriptedCornerPolicy()
        records = []
        for i in range(args.bootstrap_episodes):
            _, rec = run_episode(policy, env, horizon=args.bootstrap_horizon,
                                 seed=cfg.mixture.seed + i, difficulty=cfg.difficulty)
            records.append(rec)
    demos = demos_from_records(records)
    dconf = DiffusionConfig(train_steps=args.steps)
    policy = train_ddpm(demos, dconf, np.random.default_rng(cfg.mixture.seed),
                        obs_resolution=cfg.resolution, progress=True)
    out_path = os.path.join(cfg.out_dir, "diffusion.lgnn")
    policy.save(out_path)
    print(f"saved diffusion policy to {out_path}")
    return 0


def cmd_train_rssm(args) -> int:
    from .dataset import read_dataset
    from .rssm import train

    cfg = _load(args)
    records = read_dataset(args.data)
    print(f"training on {len(records)} trajectories "
          f"({sum(r.steps - 1 for r in records)} transitions)")
    model, log = train(records, cfg.rssm, np.random.default_rng(cfg.mixture.seed),
                       steps=args.steps, out_dir=cfg.out_dir, progress=True)
    print(f"saved model to {os.path.join(cfg.out_dir, 'model.lgnn')}")
    return 0


def cmd_plan(args) -> int:
    from .masks import MaskImage
    from .planner import ActionConstraint, plan
    from .rssm.model import GoalConditionedRSSM
    from .sim import Window, load_state, load_template, render_flat_goal, render_mask

    cfg = _load(args)
    model = GoalConditionedRSSM.load(args.model)
    state = load_state(args.state)
    template = load_template(state.template_id)
    window = cfg.window
    obs = render_mask(state, template, window, cfg.resolution)
    goal = render_flat_goal(template, window, cfg.resolution)
    constraint = ActionConstraint(
        obs, MaskImage(np.ones_like(obs.bits), obs.window_side, obs.window_center))
    action = plan(model, obs.bits.reshape(1, -1), np.zeros((1, 4)),
                  goal.bits.reshape(-1), constraint, cfg.planner)
    print("pick  = (%.4f, %.4f)" % action.pick)
    print("place = (%.4f, %.4f)" % action.place)
    return 0


def cmd_eval(args) -> int:
    from .harness import (DiffusionPolicyWrapper, PlannerPolicy, RandomPolicy,
                          ScriptedCornerPolicy, evaluate)

    cfg = _load(args)
    if args.policy == "random":
        policy = RandomPolicy()
    elif args.policy == "scripted":
        policy = ScriptedCornerPolicy()
    elif args.policy == "planner":
        from .rssm.model import GoalConditionedRSSM

        if not args.model:
            print("error: eval --policy planner needs --model", file=sys.stderr)
            return 1
        policy = PlannerPolicy(GoalConditionedRSSM.load(args.model), cfg.planner)
    elif args.policy == "diffusion":
        from .diffusion import DiffusionPolicy

        if not args.model:
            print("error: eval --policy diffusion needs --model", file=sys.stderr)
            return 1
        policy = DiffusionPolicyWrapper(DiffusionPolicy.load(args.model))
    else:
        print(f"error: unknown policy {args.policy!r}", file=sys.stderr)
        return 1

    table = evaluate(policy, cfg, progress=True)
    print(table.text())
    results_path = os.path.join(cfg.out_dir, f"results_{args.policy}.txt")
    with open(results_path, "w", encoding="utf-8") as fh:
        fh.write(table.machine_lines())
    print(f"results written to {results_path}")
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    cfg = _load(args)
    print(f"serving on 127.0.0.1:{args.port}")
    serve(cfg, port=args.port, assets_dir=args.assets)
    return 0


def cmd_gradcheck(args) -> int:
    from .nn import run_gradient_audit

    results = run_gradient_audit(seed=args.seed if args.seed is not None else 0)
    worst = max(results.values())
    for name, err in sorted(results.items()):
        print(f"  {name:<18} {err:.3e}")
    print(f"worst relative error: {worst:.3e}")
    if worst < 1e-4:
        print("gradcheck PASS")
        return 0
    print("gradcheck FAIL (>= 1e-4)")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clothlab",
        description="desk-scale goal-conditioned world-model cloth flattening")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect a diffusion/random mixture dataset")
    _common(p)
    p.add_argument("--policy", help="diffusion policy checkpoint")
    p.set_defaults(fn=cmd_collect)

    p = sub.add_parser("train-diffusion", help="train the diffusion policy on demonstrations")
    _common(p)
    p.add_argument("--demos", help="demonstration dataset file")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--bootstrap-episodes", type=int, default=50)
    p.add_argument("--bootstrap-horizon", type=int, default=12)
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("train-rssm", help="train the goal-conditioned world model")
    _common(p)
    p.add_argument("--data", required=True, help="dataset file from collect")
    p.add_argument("--steps", type=int, default=3000)
    p.set_defaults(fn=cmd_train_rssm)

    p = sub.add_parser("plan", help="plan a single action from a saved cloth state")
    _common(p)
    p.add_argument("--model", required=True, help="world-model checkpoint")
    p.add_argument("--state", required=True, help="cloth state .npz file")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("eval", help="run the evaluation protocol")
    _common(p)
    p.add_argument("--policy", default="random",
                   choices=("random", "scripted", "planner", "diffusion"))
    p.add_argument("--model", help="checkpoint for planner/diffusion policies")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="run the demonstration session service")
    _common(p)
    p.add_argument("--port", type=int, default=8741)
    p.add_argument("--assets", help="static asset directory (frontend build)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("gradcheck", help="audit every analytic gradient path")
    _common(p)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ClothLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
