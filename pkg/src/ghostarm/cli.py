"""Command-line entry points: recipe materialization, scripted recording,
replay through the executor, dataset validation, and the live gateway."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .arm import default_arm, load_arm
from .dataset import list_episodes, read_episode, write_episode
from .executor import (ExecutionSchedule, ReplayPolicy, load_schedule,
                       run_policy_loop, save_trace)
from .scripted import (load_trajectory, record_trajectory, save_bundle,
                       task_recipes)
from .validator import format_table, replay_validate, save_report, summarize
from .workspace import load_scene


def _scene_path(path: Path) -> Path:
    return path / "scene.json" if path.is_dir() else path


def _load_model(arm_path):
    return load_arm(arm_path) if arm_path else default_arm()


def _cmd_recipe(args) -> int:
    recipes = task_recipes(args.seed)
    names = list(recipes) if args.task == "all" else [args.task]
    for name in names:
        paths = save_bundle(recipes[name], Path(args.out) / name)
        print(f"{name}: scene={paths['scene']} trajectory={paths['trajectory']}")
    return 0


def _cmd_record(args) -> int:
    scene = load_scene(_scene_path(Path(args.scene)))
    trajectory = load_trajectory(args.scripted)
    model = _load_model(args.arm)
    episode, state, feedbacks = record_trajectory(trajectory, scene, model)
    if episode is None:
        print("no feasible samples; nothing recorded", file=sys.stderr)
        return 1
    path = write_episode(episode, args.out)
    frozen = sum(1 for f in feedbacks if f.awaiting_realignment)
    print(f"recorded {episode.episode_id}: {len(episode.robot)} samples, "
          f"{episode.duration_s:g}s, {frozen} frozen ticks -> {path}")
    return 0


def _cmd_replay(args) -> int:
    episode = read_episode(args.episode)
    schedule = (load_schedule(args.schedule) if args.schedule
                else ExecutionSchedule())
    policy = ReplayPolicy(episode, horizon=schedule.horizon)
    ticks = args.ticks if args.ticks else len(episode.robot)
    trace = run_policy_loop(policy, schedule, total_ticks=ticks,
                            smoothing_window=args.smoothing)
    save_trace(trace, args.trace)
    print(f"replayed {episode.episode_id}: {len(trace.queries)} queries, "
          f"{len(trace.emits)} actions -> {args.trace}")
    return 0


def _cmd_validate(args) -> int:
    scene = load_scene(_scene_path(Path(args.scene)))
    model = _load_model(args.arm)
    episode_dirs = list_episodes(args.dataset)
    if not episode_dirs:
        print(f"no episodes under {args.dataset}", file=sys.stderr)
        return 2
    reports = [
        replay_validate(read_episode(d), scene, model,
                        allow_scene_mismatch=args.allow_scene_mismatch)
        for d in episode_dirs
    ]
    summary = summarize(reports)
    print(format_table(summary, reports))
    if args.report:
        save_report(summary, reports, args.report)
        print(f"report -> {args.report}")
    return 0 if all(r.success for r in reports) else 1


def _cmd_serve(args) -> int:
    from .gateway import GatewayConfig, serve
    scene = load_scene(_scene_path(Path(args.scene)))
    config = GatewayConfig(
        scene=scene,
        model=_load_model(args.arm),
        out_dir=Path(args.out),
        host=args.host,
        port=args.port,
        heartbeat_s=args.heartbeat,
        idle_timeout_s=args.idle_timeout,
        serve_ui=Path(args.serve_ui) if args.serve_ui else None,
    )
    print(f"serving scene {scene.scene_id!r} on {args.host}:{args.port} "
          f"(episodes -> {args.out})")
    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghostarm",
        description="hardware-free demonstration capture and replay")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("recipe", help="materialize scripted task bundles")
    p.add_argument("--task", default="all",
                   choices=["pickplace", "stack", "pickplace-wall", "all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_recipe)

    p = sub.add_parser("record", help="record a scripted trajectory")
    p.add_argument("--scripted", required=True, help="trajectory json")
    p.add_argument("--scene", required=True, help="scene.json or scene dir")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--arm", help="arm model json (default built-in)")
    p.set_defaults(func=_cmd_record)

    p = sub.add_parser("replay", help="replay an episode through the executor")
    p.add_argument("--episode", required=True, help="episode directory")
    p.add_argument("--schedule", help="schedule json (default 25 Hz/25/100)")
    p.add_argument("--trace", required=True, help="output trace (jsonl)")
    p.add_argument("--ticks", type=int, help="override tick count")
    p.add_argument("--smoothing", type=int, default=1,
                   help="moving-average window (default 1: exact)")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("validate", help="kinematic replay validation")
    p.add_argument("--dataset", required=True, help="directory of episodes")
    p.add_argument("--scene", required=True, help="scene.json or scene dir")
    p.add_argument("--report", help="write machine-readable report json")
    p.add_argument("--arm", help="arm model json (default built-in)")
    p.add_argument("--allow-scene-mismatch", action="store_true")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("serve", help="run the live capture gateway")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--scene", required=True, help="scene.json or scene dir")
    p.add_argument("--arm", help="arm model json (default built-in)")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--serve-ui", help="static directory for the studio UI")
    p.add_argument("--heartbeat", type=float, default=1.0)
    p.add_argument("--idle-timeout", type=float, default=30.0)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
