"""The simulation world: scenario generation, time stepping, moving-disc
collision geometry, termination, and episode recording."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import (Action, AgentState, EntityType, JointState, to_robot_frame,
                   wrap_angle)
from .reward import RewardConfig, reward as step_reward

# Per-type uniform sampling ranges, (low, high). Ranges overlap across types
# on purpose: type must not be inferable from size/speed alone.
DEFAULT_RADIUS_RANGE = {
    EntityType.ADULT: (0.25, 0.40),
    EntityType.CHILD: (0.15, 0.30),
    EntityType.BICYCLE: (0.35, 0.60),
    EntityType.OBSTACLE: (0.2, 0.5),
}
DEFAULT_VPREF_RANGE = {
    EntityType.ADULT: (0.8, 1.4),
    EntityType.CHILD: (0.6, 1.6),
    EntityType.BICYCLE: (1.2, 2.4),
    EntityType.OBSTACLE: (0.0, 0.0),
}

PLACEMENT_ATTEMPTS = 100
PLACEMENT_CLEARANCE = 0.2


class ScenarioGenerationError(RuntimeError):
    """Raised when rejection sampling cannot place every agent."""


@dataclass(frozen=True)
class SquareCrossing:
    side: float = 11.0


@dataclass(frozen=True)
class CircleCrossing:
    radius: float = 6.0


@dataclass
class ScenarioConfig:
    """Describes a family of random scenarios."""

    layout: SquareCrossing | CircleCrossing = field(default_factory=SquareCrossing)
    counts: dict[EntityType, int] = field(default_factory=dict)
    radius_range: dict[EntityType, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_RADIUS_RANGE))
    vpref_range: dict[EntityType, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_VPREF_RANGE))
    invisible_robot: bool = True
    rng_seed: int = 0
    robot_radius: float = 0.3
    robot_v_pref: float = 1.0
    dt: float = 0.25
    t_max: float = 30.0


@dataclass
class WorldState:
    """Ground truth at one simulation instant. Value data: steps produce a
    new WorldState instead of mutating."""

    t: float
    robot: AgentState
    entities: list[AgentState]
    dt: float
    t_max: float
    invisible_robot: bool = True
    d_max: float = 0.0  # start-to-goal distance, frozen at generation
    step_count: int = 0


@dataclass
class StepEvents:
    """Summary of one step: per-type minimum robot-entity surface separation
    over the step interval (+inf for absent types) plus termination flags.

    entity_separations keeps the per-entity values (same order as
    world.entities) for danger-distance bookkeeping.
    """

    separations: dict[EntityType, float]
    d_min: float
    closest_type: EntityType | None
    reached_goal: bool
    timed_out: bool
    entity_separations: np.ndarray = field(default_factory=lambda: np.empty(0))


def min_separation(pa, va, ra: float, pb, vb, rb: float, dt: float) -> float:
    """Minimum surface separation between two constant-velocity discs over
    [0, dt]; <= 0 means contact during the interval.

    Closed form: distance from the origin to the segment traced by the
    relative position, minus the radius sum.
    """
    p = np.asarray(pb, dtype=float) - np.asarray(pa, dtype=float)
    v = np.asarray(vb, dtype=float) - np.asarray(va, dtype=float)
    vv = float(v @ v)
    if vv > 0.0:
        s = min(max(-float(p @ v) / vv, 0.0), dt)
        p = p + s * v
    return float(np.linalg.norm(p)) - (ra + rb)


@dataclass(frozen=True)
class EpisodeStatus:
    kind: str  # "running" | "reached_goal" | "collision" | "timeout"
    collision_type: EntityType | None = None

    @property
    def is_terminal(self) -> bool:
        return self.kind != "running"


RUNNING = EpisodeStatus("running")
REACHED_GOAL = EpisodeStatus("reached_goal")
TIMEOUT = EpisodeStatus("timeout")


def collision(entity_type: EntityType) -> EpisodeStatus:
    return EpisodeStatus("collision", entity_type)


def episode_status(events: StepEvents) -> EpisodeStatus:
    """Terminal classification with precedence collision > goal > timeout."""
    if events.d_min < 0:
        return collision(events.closest_type)
    if events.reached_goal:
        return REACHED_GOAL
    if events.timed_out:
        return TIMEOUT
    return RUNNING


def _sample_perimeter(layout, rng) -> tuple[np.ndarray, np.ndarray]:
    """Start on the layout boundary, goal on the opposite side."""
    if isinstance(layout, CircleCrossing):
        phi = rng.uniform(0.0, 2.0 * math.pi)
        start = layout.radius * np.array([math.cos(phi), math.sin(phi)])
        return start, -start
    half = layout.side / 2.0
    side = rng.integers(4)  # 0:left 1:right 2:bottom 3:top
    u = rng.uniform(-half, half)
    w = rng.uniform(-half, half)
    if side == 0:
        return np.array([-half, u]), np.array([half, w])
    if side == 1:
        return np.array([half, u]), np.array([-half, w])
    if side == 2:
        return np.array([u, -half]), np.array([w, half])
    return np.array([u, half]), np.array([w, -half])


def _sample_interior(layout, rng) -> np.ndarray:
    if isinstance(layout, CircleCrossing):
        # uniform over the disc
        r = layout.radius * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * math.pi)
        return r * np.array([math.cos(phi), math.sin(phi)])
    half = layout.side / 2.0
    return rng.uniform(-half, half, size=2)


def _clear_of(position: np.ndarray, radius: float,
              others: list[AgentState]) -> bool:
    for other in others:
        gap = np.linalg.norm(position - other.position) - radius - other.radius
        if gap < PLACEMENT_CLEARANCE:
            return False
    return True


def generate_scenario(config: ScenarioConfig) -> WorldState:
    """Place the robot and all entities for one episode.

    The robot crosses the layout bottom-to-top; dynamic entities start on
    the boundary with goals on the opposite side; obstacles are stationary
    agents scattered in the interior. Rejection sampling enforces an initial
    clearance between all agents.
    """
    rng = np.random.default_rng(config.rng_seed)
    layout = config.layout
    if isinstance(layout, CircleCrossing):
        extent = layout.radius
    else:
        extent = layout.side / 2.0
    robot = AgentState(
        position=np.array([0.0, -extent]),
        velocity=np.zeros(2),
        radius=config.robot_radius,
        goal=np.array([0.0, extent]),
        v_pref=config.robot_v_pref,
        heading=math.pi / 2.0,  # initial heading points at the goal
        entity_type=EntityType.ADULT,  # unused for the robot
    )

    entities: list[AgentState] = []
    for etype in sorted(config.counts, key=int):
        for _ in range(config.counts[etype]):
            r_lo, r_hi = config.radius_range[etype]
            v_lo, v_hi = config.vpref_range[etype]
            placed = False
            for _ in range(PLACEMENT_ATTEMPTS):
                radius = rng.uniform(r_lo, r_hi)
                v_pref = rng.uniform(v_lo, v_hi)
                if etype == EntityType.OBSTACLE:
                    position = _sample_interior(layout, rng)
                    goal = position.copy()
                    v_pref = 0.0
                else:
                    position, goal = _sample_perimeter(layout, rng)
                if not _clear_of(position, radius, [robot] + entities):
                    continue
                heading = math.atan2(*(goal - position)[::-1]) if v_pref > 0 else 0.0
                entities.append(AgentState(
                    position=position, velocity=np.zeros(2), radius=radius,
                    goal=goal, v_pref=v_pref, heading=heading,
                    entity_type=etype))
                placed = True
                break
            if not placed:
                raise ScenarioGenerationError(
                    f"could not place {etype.name} after {PLACEMENT_ATTEMPTS} attempts "
                    f"(seed {config.rng_seed})")

    return WorldState(
        t=0.0, robot=robot, entities=entities, dt=config.dt,
        t_max=config.t_max, invisible_robot=config.invisible_robot,
        d_max=robot.dist_to_goal())


EntityPolicy = Callable[[AgentState, list[AgentState], float], np.ndarray]


def compute_step_events(world: WorldState, robot_velocity: np.ndarray,
                        entity_velocities: list[np.ndarray],
                        new_robot_position: np.ndarray,
                        new_t: float) -> StepEvents:
    """Per-type minimum separations over the step (pre-step positions, the
    velocities applied during the step) plus the termination flags."""
    per_entity = np.full(len(world.entities), math.inf)
    separations = {etype: math.inf for etype in EntityType}
    for i, ent in enumerate(world.entities):
        sep = min_separation(world.robot.position, robot_velocity,
                             world.robot.radius, ent.position,
                             entity_velocities[i], ent.radius, world.dt)
        per_entity[i] = sep
        if sep < separations[ent.entity_type]:
            separations[ent.entity_type] = sep
    present = {e: d for e, d in separations.items() if math.isfinite(d)}
    if present:
        closest_type = min(present, key=present.get)
        d_min = present[closest_type]
    else:
        closest_type, d_min = None, math.inf
    reached = bool(np.linalg.norm(new_robot_position - world.robot.goal)
                   <= world.robot.radius)
    timed_out = (new_t >= world.t_max - 1e-9) and not reached
    return StepEvents(separations=separations, d_min=d_min,
                      closest_type=closest_type, reached_goal=reached,
                      timed_out=timed_out, entity_separations=per_entity)


def step(world: WorldState, robot_action: Action,
         entity_policy: EntityPolicy) -> tuple[WorldState, StepEvents]:
    """Advance the world by one dt.

    All decisions are made from the pre-step state (simultaneous update):
    the robot applies its commanded velocity; each dynamic entity asks
    entity_policy for a velocity over its neighbor set, which excludes the
    robot when the robot is invisible; everyone integrates holonomically.
    """
    dt = world.dt
    robot_v = robot_action.velocity

    entity_velocities: list[np.ndarray] = []
    for i, ent in enumerate(world.entities):
        if ent.v_pref <= 0:
            entity_velocities.append(np.zeros(2))
            continue
        neighbors = [e for j, e in enumerate(world.entities) if j != i]
        if not world.invisible_robot:
            neighbors.append(world.robot)
        entity_velocities.append(entity_policy(ent, neighbors, dt))

    new_robot_pos = world.robot.position + robot_v * dt
    new_t = world.t + dt
    events = compute_step_events(world, robot_v, entity_velocities,
                                 new_robot_pos, new_t)

    heading = (math.atan2(robot_v[1], robot_v[0])
               if robot_action.speed > 0 else world.robot.heading)
    new_robot = world.robot.moved(new_robot_pos, robot_v, heading)
    new_entities = []
    for ent, v in zip(world.entities, entity_velocities):
        speed = float(np.linalg.norm(v))
        h = math.atan2(v[1], v[0]) if speed > 0 else ent.heading
        new_entities.append(ent.moved(ent.position + v * dt, v, h))

    new_world = replace(world, t=new_t, robot=new_robot,
                        entities=new_entities, step_count=world.step_count + 1)
    return new_world, events


@dataclass
class StepRecord:
    state: JointState
    action: Action
    reward: float
    next_state: JointState | None
    events: StepEvents
    t_after: float
    d_g_after: float


@dataclass
class EpisodeRecord:
    """Everything one episode produced: per-step tuples, the terminal
    outcome, and (optionally) the world-frame trajectory for rendering."""

    steps: list[StepRecord]
    status: EpisodeStatus
    t_final: float
    d_max: float
    robot_v_pref: float
    dt: float
    danger_samples: dict[EntityType, list[float]]
    danger_time: float
    trajectory: list[WorldState] | None = None

    @property
    def total_reward(self) -> float:
        return sum(s.reward for s in self.steps)

    def discounted_return(self, gamma: float) -> float:
        step_discount = gamma ** (self.dt * self.robot_v_pref)
        total, factor = 0.0, 1.0
        for s in self.steps:
            total += factor * s.reward
            factor *= step_discount
        return total


RobotController = Callable[[WorldState, JointState], Action]

DANGER_DISTANCE = 0.3


def rollout(world: WorldState, robot_controller: RobotController,
            entity_policy: EntityPolicy, reward_config: RewardConfig,
            record_world: bool = False) -> EpisodeRecord:
    """Run one episode to termination (terminal event or t >= t_max)."""
    cfg = reward_config.with_d_max(world.d_max)
    steps: list[StepRecord] = []
    danger: dict[EntityType, list[float]] = {e: [] for e in EntityType}
    danger_steps = 0
    trajectory = [world] if record_world else None

    state = to_robot_frame(world.robot, world.entities)
    status = RUNNING
    while not status.is_terminal:
        action = robot_controller(world, state)
        world_next, events = step(world, action, entity_policy)
        next_state = to_robot_frame(world_next.robot, world_next.entities)
        d_g_after = world_next.robot.dist_to_goal()
        r = step_reward(events, world_next.t, d_g_after,
                        events.reached_goal, cfg)
        status = episode_status(events)
        steps.append(StepRecord(
            state=state, action=action, reward=r,
            next_state=None if status.is_terminal else next_state,
            events=events, t_after=world_next.t, d_g_after=d_g_after))
        for i, ent in enumerate(world.entities):
            sep = events.entity_separations[i]
            if sep < DANGER_DISTANCE:
                danger[ent.entity_type].append(float(sep))
        if len(events.entity_separations) and events.entity_separations.min() < DANGER_DISTANCE:
            danger_steps += 1
        if record_world:
            trajectory.append(world_next)
        world, state = world_next, next_state

    return EpisodeRecord(
        steps=steps, status=status, t_final=world.t, d_max=world.d_max,
        robot_v_pref=world.robot.v_pref, dt=world.dt,
        danger_samples=danger, danger_time=danger_steps * world.dt,
        trajectory=trajectory)
