"""Domain types and coordinate conventions shared by every other module.

All geometry is 2D, SI units (meters, seconds, radians). The robot-centric
frame puts the robot at the origin with the +x axis pointing at its goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

TWO_PI = 2.0 * math.pi

ROBOT_DIM = 6       # [d_g, v_x, v_y, r, v_pref, theta]
ENTITY_DIM = 7      # [p_x, p_y, v_x, v_y, r, d, r_sum]
TYPE_DIM = 4        # one-hot over EntityType


class EntityType(IntEnum):
    """Environmental entity categories. Codes are stable: they are used in
    every serialized artifact (configs, replay dumps, CSV traces)."""

    ADULT = 0
    BICYCLE = 1
    CHILD = 2
    OBSTACLE = 3


DYNAMIC_TYPES = (EntityType.ADULT, EntityType.BICYCLE, EntityType.CHILD)


def one_hot(entity_type: EntityType) -> np.ndarray:
    """Unit basis vector at the type's stable code."""
    vec = np.zeros(TYPE_DIM)
    vec[int(entity_type)] = 1.0
    return vec


def wrap_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    return theta % TWO_PI


@dataclass
class AgentState:
    """World-frame state of the robot or of one environmental entity.

    Obstacles are stationary agents: v_pref = 0 and velocity = 0.
    """

    position: np.ndarray
    velocity: np.ndarray
    radius: float
    goal: np.ndarray
    v_pref: float
    heading: float
    entity_type: EntityType

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)

    def moved(self, position: np.ndarray, velocity: np.ndarray,
              heading: float | None = None) -> AgentState:
        """Copy of this agent at a new position/velocity."""
        return replace(
            self,
            position=np.asarray(position, dtype=float),
            velocity=np.asarray(velocity, dtype=float),
            heading=self.heading if heading is None else heading,
        )

    def dist_to_goal(self) -> float:
        return float(np.linalg.norm(self.goal - self.position))

    def at_goal(self) -> bool:
        return self.dist_to_goal() <= self.radius


@dataclass
class RobotStateVector:
    """Robot's own state in the robot-centric frame: [d_g, v_x, v_y, r, v_pref, theta]."""

    d_g: float
    v_x: float
    v_y: float
    radius: float
    v_pref: float
    heading: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_g, self.v_x, self.v_y,
                         self.radius, self.v_pref, self.heading])


@dataclass
class EntityObservation:
    """One entity's observable state in the robot-centric frame."""

    p_x: float
    p_y: float
    v_x: float
    v_y: float
    radius: float
    distance: float      # robot-to-entity center distance
    radius_sum: float    # entity radius + robot radius
    entity_type: EntityType

    def numeric(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.v_x, self.v_y,
                         self.radius, self.distance, self.radius_sum])


@dataclass
class JointState:
    """Robot-centric observation: the robot vector plus all entity observations."""

    robot: RobotStateVector
    entities: list[EntityObservation] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.entities)


@dataclass(frozen=True)
class Action:
    """A commanded velocity: speed along a world-frame heading.

    The discrete action space only contains speeds in (0, v_pref]; a zero
    speed is still representable (stopped robot, hypothetical propagation).
    """

    speed: float
    heading: float

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.speed * math.cos(self.heading),
                         self.speed * math.sin(self.heading)])


N_SPEEDS = 5
N_HEADINGS = 16


def build_action_space(v_pref: float) -> list[Action]:
    """80 discrete actions: 5 exponentially spaced speeds in (0, v_pref]
    crossed with 16 evenly spaced world-frame headings in [0, 2*pi).

    Speeds follow v_k = v_pref * (e^{k/5} - 1) / (e - 1), k = 1..5, so the
    top speed is exactly v_pref.
    """
    if v_pref <= 0:
        raise ValueError(f"v_pref must be positive, got {v_pref}")
    speeds = [v_pref * (math.exp(k / N_SPEEDS) - 1.0) / (math.e - 1.0)
              for k in range(1, N_SPEEDS + 1)]
    headings = [TWO_PI * k / N_HEADINGS for k in range(N_HEADINGS)]
    return [Action(s, h) for s in speeds for h in headings]


def frame_rotation(robot: AgentState) -> float:
    """Rotation angle of the robot-centric frame (world heading of the goal).

    Degenerate case (robot exactly at goal) falls back to the robot's
    heading; mid-episode this cannot happen because arrival terminates the
    episode.
    """
    offset = robot.goal - robot.position
    if offset[0] == 0.0 and offset[1] == 0.0:
        return robot.heading
    return math.atan2(offset[1], offset[0])


def to_robot_frame(robot: AgentState, entities: list[AgentState]) -> JointState:
    """Express the robot's state and all entity states in the robot-centric
    frame. The transform (translation + rotation) is an isometry, so every
    distance, including d_g, matches its world-frame value.
    """
    rot = frame_rotation(robot)
    cos_r, sin_r = math.cos(rot), math.sin(rot)

    def rotate(vec: np.ndarray) -> tuple[float, float]:
        return (cos_r * vec[0] + sin_r * vec[1],
                -sin_r * vec[0] + cos_r * vec[1])

    d_g = float(np.linalg.norm(robot.goal - robot.position))
    rvx, rvy = rotate(robot.velocity)
    robot_vec = RobotStateVector(
        d_g=d_g, v_x=rvx, v_y=rvy, radius=robot.radius,
        v_pref=robot.v_pref, heading=wrap_angle(robot.heading - rot))

    observations = []
    for ent in entities:
        rel = ent.position - robot.position
        px, py = rotate(rel)
        vx, vy = rotate(ent.velocity)
        dist = float(np.linalg.norm(rel))
        observations.append(EntityObservation(
            p_x=px, p_y=py, v_x=vx, v_y=vy, radius=ent.radius,
            distance=dist, radius_sum=ent.radius + robot.radius,
            entity_type=ent.entity_type))
    return JointState(robot=robot_vec, entities=observations)
