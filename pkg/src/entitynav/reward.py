"""Entity-based reward: time and proximity terms, per-type collision
penalties, per-type discomfort penalties, and the first-match cascade that
combines them."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace

from .core import EntityType

DEFAULT_COLLISION_PENALTY = {
    EntityType.OBSTACLE: -0.5,
    EntityType.ADULT: -1.0,
    EntityType.BICYCLE: -1.5,
    EntityType.CHILD: -2.0,
}

# No discomfort entries for obstacles: the robot causes no discomfort to
# static objects, so they never route through the discomfort branches.
DEFAULT_DISCOMFORT_DISTANCE = {
    EntityType.ADULT: 0.1,
    EntityType.BICYCLE: 0.2,
    EntityType.CHILD: 0.2,
}

DEFAULT_DISCOMFORT_FACTOR = {
    EntityType.ADULT: 0.5,
    EntityType.BICYCLE: 1.0,
    EntityType.CHILD: 1.0,
}

# Discomfort branches fire in this priority order (first match wins).
DISCOMFORT_PRIORITY = (EntityType.CHILD, EntityType.BICYCLE, EntityType.ADULT)


class RewardConfigError(ValueError):
    pass


@dataclass
class RewardConfig:
    """Parameters of the reward cascade.

    d_max is the robot's start-to-goal distance, frozen at episode start;
    the shared template keeps it None and each episode fills in its own copy
    via `with_d_max`.
    """

    collision_penalty: dict[EntityType, float] = field(
        default_factory=lambda: dict(DEFAULT_COLLISION_PENALTY))
    discomfort_distance: dict[EntityType, float] = field(
        default_factory=lambda: dict(DEFAULT_DISCOMFORT_DISTANCE))
    discomfort_factor: dict[EntityType, float] = field(
        default_factory=lambda: dict(DEFAULT_DISCOMFORT_FACTOR))
    t_good: float = 20.0
    t_max: float = 30.0
    dt: float = 0.25
    d_max: float | None = None

    def __post_init__(self):
        if self.t_good >= self.t_max:
            raise RewardConfigError(
                f"t_good ({self.t_good}) must be below t_max ({self.t_max})")
        if self.dt <= 0:
            raise RewardConfigError(f"dt must be positive, got {self.dt}")
        if any(p >= 0 for p in self.collision_penalty.values()):
            raise RewardConfigError("collision penalties must be strictly negative")
        if EntityType.OBSTACLE in self.discomfort_distance:
            raise RewardConfigError("obstacles carry no discomfort distance")

    def with_d_max(self, d_max: float) -> RewardConfig:
        if d_max <= 0:
            raise RewardConfigError(f"d_max must be positive, got {d_max}")
        return replace(self, d_max=d_max)

    def config_hash(self) -> str:
        """sha256 over the episode-independent fields (d_max excluded)."""
        payload = {
            "collision_penalty": {int(k): v for k, v in sorted(self.collision_penalty.items())},
            "discomfort_distance": {int(k): v for k, v in sorted(self.discomfort_distance.items())},
            "discomfort_factor": {int(k): v for k, v in sorted(self.discomfort_factor.items())},
            "t_good": self.t_good,
            "t_max": self.t_max,
            "dt": self.dt,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def time_reward(t: float, t_good: float, t_max: float) -> float:
    """1 before t_good, linear decay to 0 at t_max, 0 afterwards."""
    if t_good >= t_max:
        raise RewardConfigError(f"t_good ({t_good}) must be below t_max ({t_max})")
    if t < t_good:
        return 1.0
    if t <= t_max:
        return (t_max - t) / (t_max - t_good)
    return 0.0


def proximity_reward(d_g: float, d_max: float) -> float:
    """1 - d_g/d_max, deliberately unclamped: moving beyond the start
    distance yields a negative value."""
    if d_max <= 0:
        raise RewardConfigError(f"d_max must be positive, got {d_max}")
    return 1.0 - d_g / d_max


def discomfort_penalty(entity_type: EntityType, d: float, dt: float,
                       config: RewardConfig) -> float:
    """(d - d_disc) * p_disc * dt for a dynamic entity inside its discomfort
    distance; always negative on the valid domain."""
    if entity_type == EntityType.OBSTACLE:
        raise RewardConfigError("obstacles never route through the discomfort branch")
    d_disc = config.discomfort_distance[entity_type]
    p_disc = config.discomfort_factor[entity_type]
    return (d - d_disc) * p_disc * dt


def reward(events, t: float, d_g: float, at_goal: bool,
           config: RewardConfig) -> float:
    """Evaluate the reward cascade for one step. First matching branch wins:

    1. timed out away from the goal      -> proximity reward
    2. contact during the step           -> collision penalty + proximity reward
    3. at the goal                       -> 1 + time reward
    4. child closer than its threshold   -> child discomfort penalty
    5. bicycle closer than its threshold -> bicycle discomfort penalty
    6. adult closer than its threshold   -> adult discomfort penalty
    7. otherwise                         -> 0

    `events` carries the per-type minimum surface separations over the step
    (see dynamics.StepEvents); absent types report +inf and never match.
    """
    if config.d_max is None:
        raise RewardConfigError("reward requires a config with d_max frozen")
    if t >= config.t_max and not at_goal:
        return proximity_reward(d_g, config.d_max)
    if events.d_min < 0:
        return (config.collision_penalty[events.closest_type]
                + proximity_reward(d_g, config.d_max))
    if at_goal:
        return 1.0 + time_reward(t, config.t_good, config.t_max)
    for etype in DISCOMFORT_PRIORITY:
        d = events.separations.get(etype, math.inf)
        if 0 <= d < config.discomfort_distance[etype]:
            return discomfort_penalty(etype, d, config.dt, config)
    return 0.0
