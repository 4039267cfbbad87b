"""Command-line interface: demo, train, evaluate, render, bench.

Exit codes: 0 success, 1 config error, 2 runtime error, 3 threshold failure
(`evaluate --assert`).
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from pathlib import Path

import numpy as np


def _add_common(parser):
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (overrides the profile)")
    parser.add_argument("--profile", choices=["desk", "paper"], default="desk")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--out", type=Path, default=Path("out"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entitynav",
        description="Entity-aware crowd navigation: simulate, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="collect ORCA demonstration episodes")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=None,
                   help="number of demonstrations (default: training.il_episodes)")

    p = sub.add_parser("train", help="imitation learning + parallel deep V-learning")
    _add_common(p)
    p.add_argument("--demos", type=Path, default=None,
                   help="reuse a demonstrations file written by `demo`")

    p = sub.add_parser("evaluate", help="run a policy over a seeded test split")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="value-network checkpoint; omit for the ORCA baseline")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--split", choices=["validation", "test"], default="test")
    p.add_argument("--assert", dest="assertions", action="append", default=[],
                   metavar="EXPR", help="e.g. 'SR>=0.5'; exit 3 when violated")

    p = sub.add_parser("render", help="render one episode to SVG")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--episode-seed", type=int, default=None,
                   help="scenario seed (default: run seed)")
    p.add_argument("--trace", action="store_true",
                   help="also write the episode trace CSV")

    p = sub.add_parser("bench", help="episode rollout throughput for N workers")
    _add_common(p)
    p.add_argument("--episodes", type=int, default=32)
    return parser


def _setup_from_args(args):
    from .config import build_setup, load_config
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    cfg = load_config(args.config, args.profile, overrides)
    return cfg, build_setup(cfg)


def _load_policy_spec(checkpoint, setup):
    from . import eval as evaluation
    from .valuenet import load_checkpoint
    if checkpoint is None:
        return evaluation.OrcaPolicySpec(setup.orca, gamma=setup.train.gamma)
    net = load_checkpoint(checkpoint,
                          expect_entity_type=setup.include_entity_type)
    return evaluation.ValuePolicySpec(net, gamma=setup.train.gamma)


def cmd_demo(args) -> int:
    from .training import collect_demonstrations, monte_carlo_pairs
    cfg, setup = _setup_from_args(args)
    episodes = args.episodes or setup.train.il_episodes
    demos = collect_demonstrations(setup, episodes)
    pairs = []
    for record in demos:
        pairs.extend(monte_carlo_pairs(record, setup.train.gamma,
                                       setup.include_entity_type))
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / "demonstrations.npz"
    robot = np.stack([p[0].robot for p in pairs])
    rows = np.concatenate([p[0].rows for p in pairs], axis=0)
    offsets = np.zeros(len(pairs) + 1, dtype=np.int64)
    np.cumsum([p[0].rows.shape[0] for p in pairs], out=offsets[1:])
    targets = np.array([p[1] for p in pairs])
    meta = {"episodes": episodes, "gamma": setup.train.gamma,
            "include_entity_type": setup.include_entity_type,
            "reward_config_hash": setup.reward.config_hash()}
    np.savez(path, robot=robot, rows=rows, offsets=offsets, targets=targets,
             meta=json.dumps(meta, sort_keys=True))
    collisions = sum(1 for d in demos if d.status.kind == "collision")
    print(f"wrote {len(pairs)} pairs from {episodes} episodes to {path}")
    print(f"demonstration collision fraction: {collisions / episodes:.3f}")
    return 0


def load_demo_pairs(path, setup):
    """Read a demonstrations.npz back into (NetworkInput, target) pairs."""
    from .config import ConfigError
    from .valuenet import NetworkInput
    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    if meta["include_entity_type"] != setup.include_entity_type:
        raise ConfigError("demonstrations were collected with a different "
                          "include_entity_type flag")
    if meta["reward_config_hash"] != setup.reward.config_hash():
        raise ConfigError("demonstrations were collected under a different "
                          "reward config")
    offsets = data["offsets"]
    return [(NetworkInput(robot=data["robot"][i],
                          rows=data["rows"][offsets[i]:offsets[i + 1]]),
             float(data["targets"][i]))
            for i in range(len(data["targets"]))]


def cmd_train(args) -> int:
    from . import eval as evaluation
    from .training import (ReplayBuffer, collect_demonstrations,
                           imitation_learning, parallel_v_learning)
    from .valuenet import save_checkpoint
    cfg, setup = _setup_from_args(args)
    args.out.mkdir(parents=True, exist_ok=True)
    from .config import dump_config
    dump_config(cfg, args.out / "run_config.json")

    if args.demos is not None:
        pairs = load_demo_pairs(args.demos, setup)
        net = None
        from .valuenet import ValueNetwork
        net = ValueNetwork(include_entity_type=setup.include_entity_type,
                           seed=setup.network_seed)
        rng = np.random.default_rng((setup.base_seed, 555))
        losses = []
        for _ in range(setup.train.il_epochs):
            order = rng.permutation(len(pairs))
            epoch = []
            for start in range(0, len(order), setup.train.batch_size):
                batch = [pairs[i] for i in order[start:start + setup.train.batch_size]]
                epoch.append(net.train_batch(batch, setup.train.il_lr))
            losses.append(float(np.mean(epoch)))
        il_pairs = pairs
    else:
        demos = collect_demonstrations(setup)
        net, il_pairs, losses = imitation_learning(demos, setup)
    print(f"imitation learning: {len(il_pairs)} pairs, "
          f"loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    save_checkpoint(net, args.out / "il_only.bin", setup.reward.config_hash())

    replay = ReplayBuffer(setup.train.replay_capacity)
    replay.extend(il_pairs)

    def progress(point):
        print(f"episode {point.episode}: eps={point.epsilon:.3f} "
              f"loss={point.loss:.4f} SR={point.sr:.3f} CR={point.cr:.3f} "
              f"reward={point.reward:.4f} WS={point.weighted_score:.3f}")

    best, history = parallel_v_learning(setup, net, replay, out_dir=args.out,
                                        progress=progress)
    save_checkpoint(best, args.out / "best.bin", setup.reward.config_hash())
    evaluation.write_training_log_csv(history, setup.reward,
                                      args.out / "training_log.csv")
    print(f"best validation reward: "
          f"{max(p.reward for p in history):.4f}; artifacts in {args.out}")
    return 0


_ASSERT_RE = re.compile(r"^\s*(\w+)\s*(>=|<=|>|<|==)\s*(-?[\d.]+)\s*$")
_OPS = {">=": lambda a, b: a >= b, "<=": lambda a, b: a <= b,
        ">": lambda a, b: a > b, "<": lambda a, b: a < b,
        "==": lambda a, b: a == b}


def _metric_value(metrics, name: str) -> float:
    from . import eval as evaluation
    from .core import EntityType
    table = {"SR": metrics.sr, "CR": metrics.cr,
             "CR_A": metrics.cr_by_type[EntityType.ADULT],
             "CR_B": metrics.cr_by_type[EntityType.BICYCLE],
             "CR_C": metrics.cr_by_type[EntityType.CHILD],
             "CR_O": metrics.cr_by_type[EntityType.OBSTACLE],
             "Time": metrics.time_mean,
             "WeightedScore": evaluation.weighted_score(metrics)}
    if name not in table:
        raise ValueError(f"unknown metric {name!r} in --assert")
    return table[name]


def cmd_evaluate(args) -> int:
    from . import eval as evaluation
    from .training import TEST_SEED_OFFSET, VALIDATION_SEED_OFFSET
    cfg, setup = _setup_from_args(args)
    spec = _load_policy_spec(args.checkpoint, setup)
    offset = (TEST_SEED_OFFSET if args.split == "test"
              else VALIDATION_SEED_OFFSET)
    seeds = [setup.base_seed + offset + i for i in range(args.episodes)]
    metrics, summaries = evaluation.evaluate(
        spec, setup.scenario, setup.reward, setup.orca, seeds,
        workers=setup.train.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    evaluation.write_metrics_csv(metrics, setup.reward,
                                 args.out / "metrics.csv")
    samples = {etype: [d for s in summaries for d in s.danger_samples[etype]]
               for etype in metrics.dd_by_type}
    hists = evaluation.danger_histogram(samples)
    evaluation.render_histogram_svg(hists, args.out / "danger_histograms.svg")
    ws = evaluation.weighted_score(metrics)
    print(f"episodes={metrics.episodes} SR={metrics.sr:.3f} CR={metrics.cr:.3f} "
          f"timeout={metrics.timeout_rate:.3f} "
          f"Time={metrics.time_mean:.2f} WeightedScore={ws:.4f}")
    for expr in args.assertions:
        m = _ASSERT_RE.match(expr)
        if not m:
            raise ValueError(f"cannot parse --assert expression {expr!r}")
        name, op, threshold = m.group(1), m.group(2), float(m.group(3))
        value = _metric_value(metrics, name)
        if math.isnan(value) or not _OPS[op](value, threshold):
            print(f"ASSERT FAILED: {name}={value} violates {expr!r}")
            return 3
        print(f"assert ok: {name}={value} satisfies {expr!r}")
    return 0


def cmd_render(args) -> int:
    from . import eval as evaluation
    cfg, setup = _setup_from_args(args)
    spec = _load_policy_spec(args.checkpoint, setup)
    seed = args.episode_seed if args.episode_seed is not None else setup.base_seed
    _, record = evaluation._run_eval_episode(
        spec, setup.scenario, setup.reward, setup.orca, seed,
        record_world=True)
    args.out.mkdir(parents=True, exist_ok=True)
    svg_path = args.out / f"episode_{seed}.svg"
    evaluation.render_trajectory_svg(record, svg_path)
    print(f"{record.status.kind} after {record.t_final:.2f}s -> {svg_path}")
    if args.trace:
        trace_path = args.out / f"episode_{seed}.csv"
        evaluation.write_trace_csv(record, trace_path)
        print(f"trace -> {trace_path}")
    return 0


def cmd_bench(args) -> int:
    from .training import bench_rollouts
    cfg, setup = _setup_from_args(args)
    workers = setup.train.workers
    result = bench_rollouts(setup, args.episodes, workers)
    print(f"workers={result['workers']} episodes={result['episodes']} "
          f"seconds={result['seconds']:.2f} "
          f"episodes_per_second={result['episodes_per_second']:.3f}")
    print(f"digest={result['digest']}")
    return 0


COMMANDS = {"demo": cmd_demo, "train": cmd_train, "evaluate": cmd_evaluate,
            "render": cmd_render, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    from .config import ConfigError
    from .reward import RewardConfigError
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, RewardConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
