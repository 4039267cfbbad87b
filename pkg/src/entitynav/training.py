"""Imitation bootstrap plus parallel deep V-learning.

Rollout workers play episodes against immutable network snapshots and return
(state, target) pairs; the coordinator owns the replay buffer and performs
all gradient updates, so workers never observe a half-updated network.
Episode seeds are a pure function of (base_seed, episode_index): the episode
set is identical for any worker count, only the interleaving of updates
differs.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field, replace
from multiprocessing import Pool

import numpy as np

from .core import build_action_space
from .dynamics import (EpisodeRecord, ScenarioConfig, generate_scenario,
                       rollout)
from .orca import OrcaParams, demonstrate_episode, entity_policy
from .planner import PolicyConfig, value_controller
from .reward import RewardConfig
from .valuenet import NetworkInput, ValueNetwork, joint_state_to_input

VALIDATION_SEED_OFFSET = 1_000_000
TEST_SEED_OFFSET = 2_000_000


class RunAbortedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    il_episodes: int = 3000
    il_epochs: int = 50
    il_lr: float = 0.01
    rl_lr: float = 0.001
    gamma: float = 0.9
    batch_size: int = 100
    rl_episodes: int = 50000
    epsilon_start: float = 0.5
    epsilon_end: float = 0.1
    epsilon_decay_episodes: int = 5000
    target_update_interval: int = 50
    workers: int = 1
    validation_interval: int = 1024
    validation_size: int = 500
    replay_capacity: int = 100_000


@dataclass
class RunSetup:
    """Everything a rollout worker needs to replay an episode index."""

    scenario: ScenarioConfig
    reward: RewardConfig
    orca: OrcaParams = field(default_factory=OrcaParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    include_entity_type: bool = True
    network_seed: int = 0
    base_seed: int = 0

    def scenario_for(self, seed: int) -> ScenarioConfig:
        return replace(self.scenario, rng_seed=seed)


def epsilon_schedule(episode: int, config: TrainConfig) -> float:
    """Linear decay from epsilon_start to epsilon_end over
    epsilon_decay_episodes, constant afterwards."""
    if episode >= config.epsilon_decay_episodes:
        return config.epsilon_end
    frac = episode / config.epsilon_decay_episodes
    return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac


class ReplayBuffer:
    """Fixed-capacity FIFO of (NetworkInput, target) pairs with uniform
    without-replacement minibatch sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list[tuple[NetworkInput, float]] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item: tuple[NetworkInput, float]) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
            self._cursor = (self._cursor + 1) % self.capacity

    def extend(self, items) -> None:
        for item in items:
            self.add(item)

    def sample(self, rng: np.random.Generator, k: int):
        k = min(k, len(self._items))
        indices = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in indices]


# -- demonstrations and imitation learning ----------------------------------

def collect_demonstrations(setup: RunSetup, n_episodes: int | None = None,
                           seed_offset: int = 0) -> list[EpisodeRecord]:
    """ORCA-driven demonstration episodes on seeded scenarios."""
    n = setup.train.il_episodes if n_episodes is None else n_episodes
    records = []
    for i in range(n):
        world = generate_scenario(
            setup.scenario_for(setup.base_seed + seed_offset + i))
        records.append(demonstrate_episode(world, setup.reward, setup.orca))
    return records


def monte_carlo_pairs(record: EpisodeRecord, gamma: float,
                      include_entity_type: bool):
    """(state, discounted return-to-go) pairs along one recorded episode."""
    step_discount = gamma ** (record.dt * record.robot_v_pref)
    pairs = []
    value = 0.0
    for step in reversed(record.steps):
        value = step.reward + step_discount * value
        pairs.append((joint_state_to_input(step.state, include_entity_type),
                      value))
    pairs.reverse()
    return pairs


def imitation_learning(demos: list[EpisodeRecord], setup: RunSetup,
                       net: ValueNetwork | None = None):
    """Supervised pre-training of V on demonstration returns.

    Returns (net, pairs, epoch_losses); the same pairs seed the replay
    buffer afterwards.
    """
    if not demos:
        raise ValueError("imitation learning requires at least one demonstration")
    cfg = setup.train
    if net is None:
        net = ValueNetwork(include_entity_type=setup.include_entity_type,
                           seed=setup.network_seed)
    pairs = []
    for record in demos:
        pairs.extend(monte_carlo_pairs(record, cfg.gamma,
                                       setup.include_entity_type))
    rng = np.random.default_rng((setup.base_seed, 555))
    epoch_losses = []
    for _ in range(cfg.il_epochs):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            losses.append(net.train_batch(batch, cfg.il_lr))
        epoch_losses.append(float(np.mean(losses)))
    return net, pairs, epoch_losses


# -- reinforcement learning episodes ----------------------------------------

@dataclass
class EpisodeResult:
    index: int
    status_kind: str
    collision_type: int | None
    t_final: float
    epsilon: float
    discounted_return: float
    pairs: list[tuple[NetworkInput, float]]


def run_episode(episode_index: int, net: ValueNetwork,
                target_net: ValueNetwork, setup: RunSetup) -> EpisodeResult:
    """Play one epsilon-greedy episode against the given snapshots and
    convert its steps into replay pairs with bootstrapped targets
    (terminal steps bootstrap to zero)."""
    cfg = setup.train
    epsilon = epsilon_schedule(episode_index, cfg)
    world = generate_scenario(
        setup.scenario_for(setup.base_seed + episode_index))
    rng = np.random.default_rng((setup.base_seed, episode_index))
    actions = build_action_space(world.robot.v_pref)
    policy_cfg = PolicyConfig(gamma=cfg.gamma, dt=world.dt, epsilon=epsilon)
    controller = value_controller(net, actions, setup.reward, policy_cfg, rng)
    record = rollout(world, controller, entity_policy(setup.orca),
                     setup.reward)
    pairs = episode_pairs(record, target_net, cfg.gamma,
                          setup.include_entity_type)
    status = record.status
    return EpisodeResult(
        index=episode_index, status_kind=status.kind,
        collision_type=(int(status.collision_type)
                        if status.collision_type is not None else None),
        t_final=record.t_final, epsilon=epsilon,
        discounted_return=record.discounted_return(cfg.gamma), pairs=pairs)


def episode_pairs(record: EpisodeRecord, target_net: ValueNetwork,
                  gamma: float, include_entity_type: bool):
    """TD targets along one episode: r_t + gamma^(dt*v_pref) * Vhat(s_{t+dt}),
    with no bootstrap past the terminal step."""
    if not record.steps:
        return []
    step_discount = gamma ** (record.dt * record.robot_v_pref)
    inputs = [joint_state_to_input(s.state, include_entity_type)
              for s in record.steps]
    next_values = np.zeros(len(record.steps))
    bootstrap = [(i, joint_state_to_input(s.next_state, include_entity_type))
                 for i, s in enumerate(record.steps) if s.next_state is not None]
    if bootstrap:
        robot = np.stack([inp.robot for _, inp in bootstrap])
        rows = np.stack([inp.rows for _, inp in bootstrap])
        values, _, _ = target_net.forward_batch(robot, rows)
        for (i, _), v in zip(bootstrap, values):
            next_values[i] = v
    return [(inputs[i], record.steps[i].reward + step_discount * next_values[i])
            for i in range(len(record.steps))]


def _worker_init():
    # one BLAS thread per rollout worker; scaling across workers is the point
    try:
        import threadpoolctl
        global _LIMITER
        _LIMITER = threadpoolctl.threadpool_limits(1)
    except Exception:
        pass


def _episode_task(args):
    index, net, target_net, setup = args
    try:
        return "ok", run_episode(index, net, target_net, setup)
    except Exception as exc:  # surfaced to the coordinator for retry
        return "err", f"episode {index}: {type(exc).__name__}: {exc}"


@dataclass
class ValidationPoint:
    episode: int
    epsilon: float
    loss: float
    sr: float
    cr: float
    reward: float
    weighted_score: float
    checkpoint: str


def parallel_v_learning(setup: RunSetup, net: ValueNetwork,
                        replay: ReplayBuffer, out_dir=None,
                        progress=None):
    """The RL phase: collect episodes in parallel against frozen snapshots,
    interleave one minibatch update per collected episode, refresh the
    target network on schedule, validate and checkpoint periodically.

    Returns (best_net, history); best is the checkpoint with the highest
    validation reward.
    """
    from . import eval as evaluation  # local import to avoid a cycle

    cfg = setup.train
    target_net = net.copy()
    sample_rng = np.random.default_rng((setup.base_seed, 777))
    pool = None
    if cfg.workers > 1:
        pool = Pool(cfg.workers, initializer=_worker_init)
    history: list[ValidationPoint] = []
    losses_since_val: list[float] = []
    best = (None, -math.inf)
    try:
        episode = 0
        while episode < cfg.rl_episodes:
            batch_indices = list(range(episode,
                                       min(episode + cfg.workers,
                                           cfg.rl_episodes)))
            tasks = [(i, net, target_net, setup) for i in batch_indices]
            if pool is not None:
                outcomes = pool.map(_episode_task, tasks)
            else:
                outcomes = [_episode_task(t) for t in tasks]
            results = []
            for task, (tag, payload) in zip(tasks, outcomes):
                if tag == "err":
                    tag, payload = _episode_task(task)  # one retry, same seed
                    if tag == "err":
                        raise RunAbortedError(payload)
                results.append(payload)

            for result in results:
                replay.extend(result.pairs)
                episode += 1
                if len(replay):
                    batch = replay.sample(sample_rng, cfg.batch_size)
                    losses_since_val.append(net.train_batch(batch, cfg.rl_lr))
                if episode % cfg.target_update_interval == 0:
                    target_net = net.copy()
                if (episode % cfg.validation_interval == 0
                        or episode == cfg.rl_episodes):
                    point = _validate(setup, net, episode, losses_since_val,
                                      out_dir, pool, evaluation)
                    history.append(point)
                    losses_since_val = []
                    if point.reward > best[1]:
                        best = (net.copy(), point.reward)
                    if progress:
                        progress(point)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    best_net = best[0] if best[0] is not None else net
    return best_net, history


def _validate(setup, net, episode, losses, out_dir, pool, evaluation):
    seeds = [setup.base_seed + VALIDATION_SEED_OFFSET + i
             for i in range(setup.train.validation_size)]
    metrics, _ = evaluation.evaluate(
        evaluation.ValuePolicySpec(net, setup.train.gamma),
        setup.scenario, setup.reward, setup.orca, seeds, pool=pool)
    path = ""
    if out_dir is not None:
        from .valuenet import save_checkpoint
        path = str(out_dir / f"ckpt_{episode:06d}.bin")
        save_checkpoint(net, path, setup.reward.config_hash())
    return ValidationPoint(
        episode=episode,
        epsilon=epsilon_schedule(episode, setup.train),
        loss=float(np.mean(losses)) if losses else math.nan,
        sr=metrics.sr, cr=metrics.cr, reward=metrics.reward_mean,
        weighted_score=evaluation.weighted_score(metrics),
        checkpoint=path)


def train_full(setup: RunSetup, out_dir=None, demos=None, progress=None):
    """Demonstrations -> imitation learning -> parallel deep V-learning.
    Returns (il_net, best_net, history)."""
    if demos is None:
        demos = collect_demonstrations(setup)
    net, pairs, il_losses = imitation_learning(demos, setup)
    il_net = net.copy()
    if out_dir is not None:
        from .valuenet import save_checkpoint
        save_checkpoint(il_net, str(out_dir / "il_only.bin"),
                        setup.reward.config_hash())
    replay = ReplayBuffer(setup.train.replay_capacity)
    replay.extend(pairs)
    best_net, history = parallel_v_learning(setup, net, replay,
                                            out_dir=out_dir, progress=progress)
    if out_dir is not None:
        from .valuenet import save_checkpoint
        save_checkpoint(best_net, str(out_dir / "best.bin"),
                        setup.reward.config_hash())
    return il_net, best_net, history, il_losses


# -- throughput benchmark ----------------------------------------------------

def bench_rollouts(setup: RunSetup, episodes: int, workers: int,
                   net: ValueNetwork | None = None):
    """Run `episodes` fixed-seed episodes through the worker pool and report
    throughput plus a digest of everything the workers produced (outcomes
    and targets), so reproducibility is a byte-level comparison."""
    if net is None:
        net = ValueNetwork(include_entity_type=setup.include_entity_type,
                           seed=setup.network_seed)
    target_net = net.copy()
    tasks = [(i, net, target_net, setup) for i in range(episodes)]
    start = time.perf_counter()
    if workers > 1:
        with Pool(workers, initializer=_worker_init) as pool:
            outcomes = pool.map(_episode_task, tasks)
    else:
        outcomes = [_episode_task(t) for t in tasks]
    elapsed = time.perf_counter() - start
    digest = hashlib.sha256()
    for tag, result in outcomes:
        if tag == "err":
            raise RunAbortedError(result)
        digest.update(result.status_kind.encode())
        digest.update(np.float64(result.t_final).tobytes())
        for inp, target in result.pairs:
            digest.update(np.float64(target).tobytes())
            digest.update(inp.rows.tobytes())
    return {"episodes": episodes, "workers": workers,
            "seconds": elapsed, "episodes_per_second": episodes / elapsed,
            "digest": digest.hexdigest()}
