"""One-step lookahead policy over the discrete action space.

Transition model: the robot applies the action velocity for one dt, every
entity keeps its current velocity. The lookahead reward uses the same
moving-disc geometry as the simulator, so plan-time and train-time rewards
are identical. The greedy decision scores all 80 actions with
reward + gamma^(dt * v_pref) * V(next state) in a single batched network
evaluation; ties break to the lowest action index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (ENTITY_DIM, ROBOT_DIM, Action, AgentState, EntityType,
                   JointState, one_hot, to_robot_frame, wrap_angle)
from .dynamics import StepEvents, WorldState
from .reward import RewardConfig, reward as step_reward
from .valuenet import ValueNetwork, input_width


@dataclass
class PolicyConfig:
    gamma: float = 0.9
    dt: float = 0.25
    epsilon: float = 0.0


def propagate(robot: AgentState, entities: list[AgentState], action: Action,
              dt: float) -> JointState:
    """Predicted joint state after one dt: robot moves at the action
    velocity, entities continue at their current velocities."""
    new_robot, new_entities = propagate_world(robot, entities, action, dt)
    return to_robot_frame(new_robot, new_entities)


def propagate_world(robot: AgentState, entities: list[AgentState],
                    action: Action, dt: float):
    v = action.velocity
    heading = math.atan2(v[1], v[0]) if action.speed > 0 else robot.heading
    new_robot = robot.moved(robot.position + v * dt, v, heading)
    new_entities = [e.moved(e.position + e.velocity * dt, e.velocity)
                    for e in entities]
    return new_robot, new_entities


def _lookahead_events(world: WorldState, velocities: np.ndarray,
                      new_positions: np.ndarray) -> list[StepEvents]:
    """StepEvents for each hypothetical robot velocity, vectorized over the
    action axis. Entities move at their current velocities."""
    n_actions = velocities.shape[0]
    robot = world.robot
    new_t = world.t + world.dt
    n = len(world.entities)
    if n:
        ent_p = np.stack([e.position for e in world.entities])
        ent_v = np.stack([e.velocity for e in world.entities])
        ent_r = np.array([e.radius for e in world.entities])
        rel_p = (ent_p - robot.position)[None, :, :]
        rel_v = ent_v[None, :, :] - velocities[:, None, :]
        vv = np.einsum("ank,ank->an", rel_v, rel_v)
        pv = np.einsum("ank,ank->an", np.broadcast_to(rel_p, rel_v.shape), rel_v)
        s = np.where(vv > 0.0, np.clip(-pv / np.where(vv > 0, vv, 1.0), 0.0, world.dt), 0.0)
        closest = rel_p + s[:, :, None] * rel_v
        seps = np.linalg.norm(closest, axis=2) - (ent_r + robot.radius)[None, :]
    else:
        seps = np.empty((n_actions, 0))
    reached = (np.linalg.norm(new_positions - robot.goal, axis=1)
               <= robot.radius)
    events = []
    types = [e.entity_type for e in world.entities]
    for a in range(n_actions):
        separations = {etype: math.inf for etype in EntityType}
        for i, etype in enumerate(types):
            if seps[a, i] < separations[etype]:
                separations[etype] = seps[a, i]
        present = {e: d for e, d in separations.items() if math.isfinite(d)}
        if present:
            closest_type = min(present, key=present.get)
            d_min = present[closest_type]
        else:
            closest_type, d_min = None, math.inf
        timed_out = (new_t >= world.t_max - 1e-9) and not reached[a]
        events.append(StepEvents(
            separations=separations, d_min=d_min, closest_type=closest_type,
            reached_goal=bool(reached[a]), timed_out=timed_out,
            entity_separations=seps[a]))
    return events


def _batched_next_inputs(world: WorldState, velocities: np.ndarray,
                         new_positions: np.ndarray,
                         include_entity_type: bool):
    """Robot vectors and entity rows of every propagated state, expressed in
    each state's own robot-centric frame. Mirrors propagate()+to_robot_frame
    in vectorized form (asserted equal in tests)."""
    n_actions = velocities.shape[0]
    robot = world.robot
    n = len(world.entities)
    offsets = robot.goal[None, :] - new_positions
    d_g = np.linalg.norm(offsets, axis=1)
    speeds = np.linalg.norm(velocities, axis=1)
    headings = np.where(speeds > 0,
                        np.arctan2(velocities[:, 1], velocities[:, 0]),
                        robot.heading)
    rot = np.where(d_g > 0, np.arctan2(offsets[:, 1], offsets[:, 0]), headings)
    cos_r, sin_r = np.cos(rot), np.sin(rot)
    rvx = cos_r * velocities[:, 0] + sin_r * velocities[:, 1]
    rvy = -sin_r * velocities[:, 0] + cos_r * velocities[:, 1]
    robot_vecs = np.stack([
        d_g, rvx, rvy,
        np.full(n_actions, robot.radius),
        np.full(n_actions, robot.v_pref),
        (headings - rot) % (2.0 * math.pi),
    ], axis=1)

    width = input_width(include_entity_type)
    rows = np.zeros((n_actions, n, width))
    if n:
        ent_p = np.stack([e.position + e.velocity * world.dt
                          for e in world.entities])
        ent_v = np.stack([e.velocity for e in world.entities])
        ent_r = np.array([e.radius for e in world.entities])
        rel = ent_p[None, :, :] - new_positions[:, None, :]
        px = cos_r[:, None] * rel[:, :, 0] + sin_r[:, None] * rel[:, :, 1]
        py = -sin_r[:, None] * rel[:, :, 0] + cos_r[:, None] * rel[:, :, 1]
        evx = cos_r[:, None] * ent_v[None, :, 0] + sin_r[:, None] * ent_v[None, :, 1]
        evy = -sin_r[:, None] * ent_v[None, :, 0] + cos_r[:, None] * ent_v[None, :, 1]
        dist = np.linalg.norm(rel, axis=2)
        rows[:, :, :ROBOT_DIM] = robot_vecs[:, None, :]
        rows[:, :, ROBOT_DIM + 0] = px
        rows[:, :, ROBOT_DIM + 1] = py
        rows[:, :, ROBOT_DIM + 2] = evx
        rows[:, :, ROBOT_DIM + 3] = evy
        rows[:, :, ROBOT_DIM + 4] = ent_r[None, :]
        rows[:, :, ROBOT_DIM + 5] = dist
        rows[:, :, ROBOT_DIM + 6] = ent_r[None, :] + robot.radius
        if include_entity_type:
            onehots = np.stack([one_hot(e.entity_type) for e in world.entities])
            rows[:, :, ROBOT_DIM + ENTITY_DIM:] = onehots[None, :, :]
    return robot_vecs, rows, d_g


def action_scores(world: WorldState, actions: list[Action],
                  network: ValueNetwork, reward_config: RewardConfig,
                  config: PolicyConfig) -> np.ndarray:
    """reward + gamma^(dt*v_pref) * V(next) for every action, computed with
    one batched network evaluation."""
    cfg = reward_config.with_d_max(world.d_max)
    velocities = np.array([[a.speed * math.cos(a.heading),
                            a.speed * math.sin(a.heading)] for a in actions])
    new_positions = world.robot.position[None, :] + velocities * world.dt
    events = _lookahead_events(world, velocities, new_positions)
    robot_vecs, rows, d_g = _batched_next_inputs(
        world, velocities, new_positions, network.include_entity_type)
    values, _, _ = network.forward_batch(robot_vecs, rows)
    new_t = world.t + world.dt
    rewards = np.array([
        step_reward(events[a], new_t, float(d_g[a]), events[a].reached_goal, cfg)
        for a in range(len(actions))])
    discount = config.gamma ** (config.dt * world.robot.v_pref)
    return rewards + discount * values


def select_action(world: WorldState, actions: list[Action],
                  network: ValueNetwork, reward_config: RewardConfig,
                  config: PolicyConfig, rng: np.random.Generator) -> Action:
    """Epsilon-greedy one-step lookahead policy."""
    if config.epsilon > 0 and rng.random() < config.epsilon:
        return actions[int(rng.integers(len(actions)))]
    scores = action_scores(world, actions, network, reward_config, config)
    return actions[int(np.argmax(scores))]


def value_controller(network: ValueNetwork, actions: list[Action],
                     reward_config: RewardConfig, config: PolicyConfig,
                     rng: np.random.Generator):
    """dynamics.rollout adapter for the lookahead policy."""
    def controller(world: WorldState, _joint) -> Action:
        return select_action(world, actions, network, reward_config, config, rng)
    return controller
