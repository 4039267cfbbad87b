"""Metrics, test harness, danger-distance histograms, weighted score, and
trajectory/plot export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from multiprocessing import Pool

import numpy as np

from .core import Action, EntityType, build_action_space
from .dynamics import (DANGER_DISTANCE, EpisodeRecord, ScenarioConfig,
                       WorldState, generate_scenario, rollout)
from .orca import OrcaParams, entity_policy, orca_robot_controller
from .planner import PolicyConfig, value_controller
from .reward import RewardConfig
from .valuenet import ValueNetwork

HISTOGRAM_BIN_WIDTH = 0.02

WS_WEIGHTS = {
    EntityType.ADULT: 1.0,
    EntityType.CHILD: 4.0,
    EntityType.BICYCLE: 2.0,
    EntityType.OBSTACLE: 0.5,
}


@dataclass
class Metrics:
    """Aggregate episode outcomes. Time and the per-type danger distances
    are NaN when undefined (no successes / no samples)."""

    episodes: int
    sr: float
    cr: float
    cr_by_type: dict[EntityType, float]
    timeout_rate: float
    time_mean: float
    dd_by_type: dict[EntityType, float]
    danger_time_mean: float
    reward_mean: float


def weighted_score(m: Metrics) -> float:
    """Success rate minus type-weighted collision rates."""
    return m.sr - sum(WS_WEIGHTS[e] * m.cr_by_type[e] for e in WS_WEIGHTS)


@dataclass
class EpisodeSummary:
    seed: int
    status_kind: str
    collision_type: int | None
    t_final: float
    danger_samples: dict[EntityType, list[float]]
    danger_time: float
    discounted_return: float


def summarize(record: EpisodeRecord, seed: int, gamma: float) -> EpisodeSummary:
    status = record.status
    return EpisodeSummary(
        seed=seed, status_kind=status.kind,
        collision_type=(int(status.collision_type)
                        if status.collision_type is not None else None),
        t_final=record.t_final,
        danger_samples=record.danger_samples,
        danger_time=record.danger_time,
        discounted_return=record.discounted_return(gamma))


@dataclass
class OrcaPolicySpec:
    params: OrcaParams = field(default_factory=OrcaParams)
    gamma: float = 0.9


@dataclass
class ValuePolicySpec:
    net: ValueNetwork
    gamma: float = 0.9


def _run_eval_episode(spec, scenario: ScenarioConfig, reward_cfg: RewardConfig,
                      orca_params: OrcaParams, seed: int,
                      record_world: bool = False) -> tuple[EpisodeSummary, EpisodeRecord]:
    world = generate_scenario(replace(scenario, rng_seed=seed))
    if isinstance(spec, OrcaPolicySpec):
        controller = orca_robot_controller(spec.params)
        gamma = spec.gamma
    else:
        actions = build_action_space(world.robot.v_pref)
        policy_cfg = PolicyConfig(gamma=spec.gamma, dt=world.dt, epsilon=0.0)
        rng = np.random.default_rng(seed)  # unused at epsilon = 0
        controller = value_controller(spec.net, actions, reward_cfg,
                                      policy_cfg, rng)
        gamma = spec.gamma
    record = rollout(world, controller, entity_policy(orca_params),
                     reward_cfg, record_world=record_world)
    return summarize(record, seed, gamma), record


def _eval_task(args):
    spec, scenario, reward_cfg, orca_params, seed = args
    summary, _ = _run_eval_episode(spec, scenario, reward_cfg, orca_params, seed)
    return summary


def evaluate(spec, scenario: ScenarioConfig, reward_cfg: RewardConfig,
             orca_params: OrcaParams, seeds: list[int],
             pool: Pool | None = None, workers: int = 1):
    """Run every seeded episode at epsilon = 0 and accumulate Metrics.
    Results are independent of the worker count: accumulation is a fold
    over per-episode summaries in seed order."""
    tasks = [(spec, scenario, reward_cfg, orca_params, s) for s in seeds]
    own_pool = None
    try:
        if pool is None and workers > 1:
            from .training import _worker_init
            own_pool = Pool(workers, initializer=_worker_init)
            pool = own_pool
        if pool is not None:
            summaries = pool.map(_eval_task, tasks)
        else:
            summaries = [_eval_task(t) for t in tasks]
    finally:
        if own_pool is not None:
            own_pool.close()
            own_pool.join()
    return metrics_from_summaries(summaries), summaries


def metrics_from_summaries(summaries: list[EpisodeSummary]) -> Metrics:
    n = len(summaries)
    if n == 0:
        raise ValueError("no episodes to aggregate")
    successes = [s for s in summaries if s.status_kind == "reached_goal"]
    collisions = [s for s in summaries if s.status_kind == "collision"]
    cr_by_type = {}
    for etype in EntityType:
        k = sum(1 for s in collisions if s.collision_type == int(etype))
        cr_by_type[etype] = k / n
    dd_by_type = {}
    for etype in EntityType:
        samples = [d for s in summaries for d in s.danger_samples[etype]]
        dd_by_type[etype] = float(np.mean(samples)) if samples else math.nan
    return Metrics(
        episodes=n,
        sr=len(successes) / n,
        cr=len(collisions) / n,
        cr_by_type=cr_by_type,
        timeout_rate=sum(1 for s in summaries if s.status_kind == "timeout") / n,
        time_mean=(float(np.mean([s.t_final for s in successes]))
                   if successes else math.nan),
        dd_by_type=dd_by_type,
        danger_time_mean=float(np.mean([s.danger_time for s in summaries])),
        reward_mean=float(np.mean([s.discounted_return for s in summaries])))


# -- danger-distance histograms ----------------------------------------------

@dataclass
class Histogram:
    edges: np.ndarray
    densities: np.ndarray


def danger_histogram(distances_by_type: dict[EntityType, list[float]],
                     bin_width: float = HISTOGRAM_BIN_WIDTH,
                     upper: float = DANGER_DISTANCE):
    """Per-type density histogram over [0, upper) with fixed-width bins.
    Types with no samples map to None (not an all-zero histogram)."""
    n_bins = int(round(upper / bin_width))
    edges = np.linspace(0.0, upper, n_bins + 1)
    out: dict[EntityType, Histogram | None] = {}
    for etype in EntityType:
        samples = [d for d in distances_by_type.get(etype, []) if 0 <= d < upper]
        if not samples:
            out[etype] = None
            continue
        counts, _ = np.histogram(samples, bins=edges)
        densities = counts / (len(samples) * bin_width)
        out[etype] = Histogram(edges=edges, densities=densities)
    return out


# -- CSV export ---------------------------------------------------------------

METRICS_COLUMNS = ["SR", "CR", "CR_A", "CR_B", "CR_C", "CR_O", "Time",
                   "DD_A", "DD_B", "DD_C", "DD_O", "WeightedScore"]


def _fmt(x: float) -> str:
    return "NaN" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def _header_comment(reward_cfg: RewardConfig) -> str:
    return (f"# config_hash={reward_cfg.config_hash()} "
            f"t_max={reward_cfg.t_max} t_good={reward_cfg.t_good} "
            f"dt={reward_cfg.dt}")


def write_metrics_csv(metrics: Metrics, reward_cfg: RewardConfig, path) -> None:
    row = [metrics.sr, metrics.cr,
           metrics.cr_by_type[EntityType.ADULT],
           metrics.cr_by_type[EntityType.BICYCLE],
           metrics.cr_by_type[EntityType.CHILD],
           metrics.cr_by_type[EntityType.OBSTACLE],
           metrics.time_mean,
           metrics.dd_by_type[EntityType.ADULT],
           metrics.dd_by_type[EntityType.BICYCLE],
           metrics.dd_by_type[EntityType.CHILD],
           metrics.dd_by_type[EntityType.OBSTACLE],
           weighted_score(metrics)]
    with open(path, "w", newline="") as fh:
        fh.write(_header_comment(reward_cfg) + "\n")
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        writer.writerow([_fmt(x) for x in row])


TRAINING_LOG_COLUMNS = ["episode", "epsilon", "loss", "val_sr", "val_cr",
                        "val_reward", "val_weighted_score"]


def write_training_log_csv(history, reward_cfg: RewardConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_header_comment(reward_cfg) + "\n")
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_COLUMNS)
        for p in history:
            writer.writerow([p.episode, _fmt(p.epsilon), _fmt(p.loss),
                             _fmt(p.sr), _fmt(p.cr), _fmt(p.reward),
                             _fmt(p.weighted_score)])


TRACE_COLUMNS = ["t", "agent_id", "entity_type_code",
                 "p_x", "p_y", "v_x", "v_y", "r"]
ROBOT_TYPE_CODE = -1


def write_trace_csv(record: EpisodeRecord, path) -> None:
    """World-frame trajectory dump, one row per agent per step. The robot is
    agent 0 with type code -1; entities keep their stable type codes."""
    if record.trajectory is None:
        raise ValueError("episode was recorded without record_world=True")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for world in record.trajectory:
            rows = [(0, ROBOT_TYPE_CODE, world.robot)]
            rows += [(i + 1, int(e.entity_type), e)
                     for i, e in enumerate(world.entities)]
            for agent_id, code, agent in rows:
                writer.writerow([_fmt(world.t), agent_id, code,
                                 _fmt(agent.position[0]), _fmt(agent.position[1]),
                                 _fmt(agent.velocity[0]), _fmt(agent.velocity[1]),
                                 _fmt(agent.radius)])


# -- SVG export ----------------------------------------------------------------

TYPE_COLORS = {
    EntityType.ADULT: "#1f77b4",
    EntityType.BICYCLE: "#ff7f0e",
    EntityType.CHILD: "#d62728",
    EntityType.OBSTACLE: "#7f7f7f",
}
ROBOT_COLOR = "#2ca02c"


def _star_points(cx: float, cy: float, outer: float, inner: float) -> str:
    pts = []
    for k in range(10):
        r = outer if k % 2 == 0 else inner
        angle = math.pi / 2 + k * math.pi / 5
        pts.append(f"{cx + r * math.cos(angle):.2f},{cy - r * math.sin(angle):.2f}")
    return " ".join(pts)


class _SvgCanvas:
    """Tiny deterministic SVG builder: fixed float formatting, no timestamps."""

    def __init__(self, width: int, height: int):
        self.width, self.height = width, height
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>']

    def circle(self, x, y, r, fill, opacity=1.0, stroke="none"):
        self.parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r:.2f}" fill="{fill}" '
            f'fill-opacity="{opacity:.2f}" stroke="{stroke}"/>')

    def polyline(self, points, color, width=1.0, opacity=1.0):
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width:.2f}" stroke-opacity="{opacity:.2f}"/>')

    def star(self, x, y, size, color):
        self.parts.append(
            f'<polygon points="{_star_points(x, y, size, 0.4 * size)}" '
            f'fill="{color}" stroke="black" stroke-width="0.5"/>')

    def rect(self, x, y, w, h, fill, stroke="none"):
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" '
            f'fill="{fill}" stroke="{stroke}"/>')

    def text(self, x, y, s, size=12, anchor="start"):
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}">{s}</text>')

    def tostring(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def render_trajectory_svg(record: EpisodeRecord, path,
                          size: int = 600) -> None:
    """Trajectory snapshot: paths, final agent discs, goals as stars."""
    if record.trajectory is None:
        raise ValueError("episode was recorded without record_world=True")
    worlds = record.trajectory
    xs, ys = [], []
    for world in worlds:
        for agent in [world.robot] + world.entities:
            xs.append(agent.position[0])
            ys.append(agent.position[1])
        xs.append(world.robot.goal[0])
        ys.append(world.robot.goal[1])
    margin = 1.0
    lo = min(min(xs), min(ys)) - margin
    hi = max(max(xs), max(ys)) + margin
    scale = size / (hi - lo)

    def tx(x):
        return (x - lo) * scale

    def ty(y):
        return size - (y - lo) * scale

    canvas = _SvgCanvas(size, size)
    final = worlds[-1]
    for idx, ent in enumerate(final.entities):
        color = TYPE_COLORS[ent.entity_type]
        pts = [(tx(w.entities[idx].position[0]), ty(w.entities[idx].position[1]))
               for w in worlds]
        canvas.polyline(pts, color, width=1.0, opacity=0.5)
        canvas.circle(tx(ent.position[0]), ty(ent.position[1]),
                      ent.radius * scale, color, opacity=0.9)
        if ent.v_pref > 0:
            canvas.star(tx(ent.goal[0]), ty(ent.goal[1]), 6.0, color)
    robot_pts = [(tx(w.robot.position[0]), ty(w.robot.position[1]))
                 for w in worlds]
    canvas.polyline(robot_pts, ROBOT_COLOR, width=2.0)
    canvas.circle(tx(final.robot.position[0]), ty(final.robot.position[1]),
                  final.robot.radius * scale, ROBOT_COLOR)
    canvas.star(tx(final.robot.goal[0]), ty(final.robot.goal[1]), 8.0,
                ROBOT_COLOR)
    canvas.text(10, 18, f"outcome: {record.status.kind} t={record.t_final:.2f}s")
    with open(path, "w") as fh:
        fh.write(canvas.tostring())


def render_histogram_svg(hists, path, size: int = 900,
                         panel_height: int = 180) -> None:
    """One panel per entity type: danger-distance densities over [0, 0.3)."""
    types = list(EntityType)
    height = panel_height * len(types)
    canvas = _SvgCanvas(size, height)
    for row, etype in enumerate(types):
        top = row * panel_height
        canvas.text(10, top + 16, etype.name, size=13)
        hist = hists.get(etype)
        if hist is None:
            canvas.text(10, top + 40, "no danger samples", size=11)
            continue
        peak = max(float(hist.densities.max()), 1e-9)
        plot_h = panel_height - 40
        bar_w = (size - 60) / len(hist.densities)
        for i, density in enumerate(hist.densities):
            h = plot_h * float(density) / peak
            canvas.rect(40 + i * bar_w, top + 30 + (plot_h - h),
                        bar_w - 1.0, h, TYPE_COLORS[etype])
        canvas.text(40, top + panel_height - 4, "0.0", size=10)
        canvas.text(size - 40, top + panel_height - 4, "0.3", size=10,
                    anchor="end")
    with open(path, "w") as fh:
        fh.write(canvas.tostring())
