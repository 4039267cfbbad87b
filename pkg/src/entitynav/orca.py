"""Optimal Reciprocal Collision Avoidance.

Velocity selection per agent: one half-plane constraint per neighbor derived
from the truncated velocity-obstacle geometry with reciprocity 1/2, then an
incremental linear program for the feasible velocity closest to the preferred
one. When the constraints are infeasible the solver falls back to the
3D-LP that minimizes the largest constraint violation ("safest" direction).

Scalar tuples instead of numpy inside the hot loop: neighbor counts are
small and per-call overhead dominates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Action, AgentState, wrap_angle
from .dynamics import EpisodeRecord, WorldState, rollout
from .reward import RewardConfig

EPSILON = 1e-10


@dataclass
class OrcaParams:
    time_horizon: float = 5.0
    time_horizon_obstacle: float = 5.0
    neighbor_distance: float = 10.0
    max_neighbors: int = 10
    safety_buffer: float = 0.01


def _det(ax, ay, bx, by):
    return ax * by - ay * bx


class _Line:
    """Directed line: points on the left of (point, direction) are feasible."""

    __slots__ = ("px", "py", "dx", "dy")

    def __init__(self, px, py, dx, dy):
        self.px, self.py, self.dx, self.dy = px, py, dx, dy


def _linear_program1(lines, line_no, radius, opt_x, opt_y, direction_opt):
    """Optimize along lines[line_no] subject to the speed circle and all
    earlier lines. Returns (ok, x, y)."""
    cur = lines[line_no]
    dot = cur.px * cur.dx + cur.py * cur.dy
    disc = dot * dot + radius * radius - (cur.px * cur.px + cur.py * cur.py)
    if disc < 0.0:
        return False, 0.0, 0.0
    sqrt_disc = math.sqrt(disc)
    t_left = -dot - sqrt_disc
    t_right = -dot + sqrt_disc

    for i in range(line_no):
        prev = lines[i]
        denom = _det(cur.dx, cur.dy, prev.dx, prev.dy)
        numer = _det(prev.dx, prev.dy, cur.px - prev.px, cur.py - prev.py)
        if abs(denom) <= EPSILON:
            if numer < 0.0:
                return False, 0.0, 0.0
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return False, 0.0, 0.0

    if direction_opt:
        if opt_x * cur.dx + opt_y * cur.dy > 0.0:
            t = t_right
        else:
            t = t_left
    else:
        t = cur.dx * (opt_x - cur.px) + cur.dy * (opt_y - cur.py)
        t = min(max(t, t_left), t_right)
    return True, cur.px + t * cur.dx, cur.py + t * cur.dy


def _linear_program2(lines, radius, opt_x, opt_y, direction_opt):
    """Incremental LP over all half-planes inside the speed circle.
    Returns (first failing line index or len(lines), x, y)."""
    if direction_opt:
        x, y = opt_x * radius, opt_y * radius
    elif opt_x * opt_x + opt_y * opt_y > radius * radius:
        scale = radius / math.hypot(opt_x, opt_y)
        x, y = opt_x * scale, opt_y * scale
    else:
        x, y = opt_x, opt_y

    for i, line in enumerate(lines):
        if _det(line.dx, line.dy, line.px - x, line.py - y) > 0.0:
            ok, nx, ny = _linear_program1(lines, i, radius, opt_x, opt_y,
                                          direction_opt)
            if not ok:
                return i, x, y
            x, y = nx, ny
    return len(lines), x, y


def _linear_program3(lines, begin_line, radius, x, y):
    """Infeasible fallback: progressively relax, minimizing the largest
    violation among the constraints seen so far."""
    distance = 0.0
    for i in range(begin_line, len(lines)):
        line = lines[i]
        if _det(line.dx, line.dy, line.px - x, line.py - y) > distance:
            proj: list[_Line] = []
            for j in range(i):
                other = lines[j]
                denom = _det(line.dx, line.dy, other.dx, other.dy)
                if abs(denom) <= EPSILON:
                    if line.dx * other.dx + line.dy * other.dy > 0.0:
                        continue  # parallel, same direction: redundant
                    px = 0.5 * (line.px + other.px)
                    py = 0.5 * (line.py + other.py)
                else:
                    t = _det(other.dx, other.dy,
                             line.px - other.px, line.py - other.py) / denom
                    px = line.px + t * line.dx
                    py = line.py + t * line.dy
                ddx = other.dx - line.dx
                ddy = other.dy - line.dy
                norm = math.hypot(ddx, ddy)
                proj.append(_Line(px, py, ddx / norm, ddy / norm))
            fail, nx, ny = _linear_program2(proj, radius, -line.dy, line.dx,
                                            True)
            if fail >= len(proj):
                # kept feasible with respect to the projected constraints
                x, y = nx, ny
            distance = _det(line.dx, line.dy, line.px - x, line.py - y)
    return x, y


def _halfplane(rel_px, rel_py, rel_vx, rel_vy, combined_r, horizon, dt):
    """ORCA half-plane for one neighbor: returns (u, direction) where u is
    the smallest velocity change onto the velocity-obstacle boundary."""
    dist_sq = rel_px * rel_px + rel_py * rel_py
    r_sq = combined_r * combined_r
    if dist_sq > r_sq:
        inv_h = 1.0 / horizon
        wx = rel_vx - inv_h * rel_px
        wy = rel_vy - inv_h * rel_py
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * rel_px + wy * rel_py
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            # closest to the cutoff circle
            w_len = math.sqrt(w_len_sq)
            ux, uy = wx / w_len, wy / w_len
            dx, dy = uy, -ux
            scale = combined_r * inv_h - w_len
            return (scale * ux, scale * uy), (dx, dy)
        # closest to one of the legs; the sign of det picks the side,
        # so symmetric encounters break ties consistently
        leg = math.sqrt(dist_sq - r_sq)
        if _det(rel_px, rel_py, wx, wy) > 0.0:
            dx = (rel_px * leg - rel_py * combined_r) / dist_sq
            dy = (rel_px * combined_r + rel_py * leg) / dist_sq
        else:
            dx = -(rel_px * leg + rel_py * combined_r) / dist_sq
            dy = -(-rel_px * combined_r + rel_py * leg) / dist_sq
        dot2 = rel_vx * dx + rel_vy * dy
        return (dot2 * dx - rel_vx, dot2 * dy - rel_vy), (dx, dy)
    # already overlapping: push out within one time step
    inv_dt = 1.0 / dt
    wx = rel_vx - inv_dt * rel_px
    wy = rel_vy - inv_dt * rel_py
    w_len = math.hypot(wx, wy)
    if w_len < EPSILON:
        ux, uy = 1.0, 0.0
    else:
        ux, uy = wx / w_len, wy / w_len
    scale = combined_r * inv_dt - w_len
    return (scale * ux, scale * uy), (uy, -ux)


def orca_velocity(agent: AgentState, neighbors: list[AgentState],
                  params: OrcaParams, dt: float) -> np.ndarray:
    """New velocity for `agent`: feasible under one ORCA half-plane per
    neighbor (reciprocity 1/2), as close as possible to the preferred
    velocity (straight to goal, capped to not overshoot within dt), with
    speed at most v_pref."""
    px, py = float(agent.position[0]), float(agent.position[1])
    vx, vy = float(agent.velocity[0]), float(agent.velocity[1])
    gx, gy = float(agent.goal[0]), float(agent.goal[1])

    to_goal_x, to_goal_y = gx - px, gy - py
    dist = math.hypot(to_goal_x, to_goal_y)
    if dist > EPSILON:
        pref_speed = min(agent.v_pref, dist / dt)
        pref_x = to_goal_x / dist * pref_speed
        pref_y = to_goal_y / dist * pref_speed
    else:
        pref_x = pref_y = 0.0

    nearby = []
    for nb in neighbors:
        d = math.hypot(float(nb.position[0]) - px, float(nb.position[1]) - py)
        if d <= params.neighbor_distance:
            nearby.append((d, nb))
    nearby.sort(key=lambda item: item[0])
    nearby = nearby[:params.max_neighbors]

    lines = []
    for _, nb in nearby:
        rel_px = float(nb.position[0]) - px
        rel_py = float(nb.position[1]) - py
        if abs(rel_px) < EPSILON and abs(rel_py) < EPSILON:
            rel_px += 1e-6  # coincident centers: fixed-direction nudge
        rel_vx = vx - float(nb.velocity[0])
        rel_vy = vy - float(nb.velocity[1])
        if _det(rel_px, rel_py, rel_vx, rel_vy) == 0.0:
            # exactly collinear approach (perfect symmetry): no leg side is
            # preferred, and projecting on the cutoff circle points straight
            # backward, which deadlocks. Nudge the relative position to the
            # left, a consistent side for both parties of a mirrored pair.
            norm = math.hypot(rel_px, rel_py)
            rel_px, rel_py = (rel_px - 1e-6 * rel_py / norm,
                              rel_py + 1e-6 * rel_px / norm)
        combined = agent.radius + nb.radius + params.safety_buffer
        horizon = (params.time_horizon_obstacle if nb.v_pref <= 0
                   else params.time_horizon)
        (ux, uy), (dx, dy) = _halfplane(rel_px, rel_py, rel_vx, rel_vy,
                                        combined, horizon, dt)
        lines.append(_Line(vx + 0.5 * ux, vy + 0.5 * uy, dx, dy))

    fail, out_x, out_y = _linear_program2(lines, agent.v_pref, pref_x, pref_y,
                                          False)
    if fail < len(lines):
        out_x, out_y = _linear_program3(lines, fail, agent.v_pref, out_x,
                                        out_y)
    return np.array([out_x, out_y])


def entity_policy(params: OrcaParams):
    """dynamics.step adapter: all simulated dynamic entities run ORCA."""
    def policy(agent: AgentState, neighbors: list[AgentState],
               dt: float) -> np.ndarray:
        return orca_velocity(agent, neighbors, params, dt)
    return policy


def orca_robot_controller(params: OrcaParams):
    """Robot controller that runs ORCA over every entity (the robot always
    sees the crowd, whether or not the crowd sees it)."""
    def controller(world: WorldState, _joint) -> Action:
        v = orca_velocity(world.robot, world.entities, params, world.dt)
        speed = float(np.linalg.norm(v))
        heading = wrap_angle(math.atan2(v[1], v[0])) if speed > 0 else world.robot.heading
        return Action(speed, heading)
    return controller


def demonstrate_episode(world: WorldState, reward_config: RewardConfig,
                        params: OrcaParams | None = None,
                        record_world: bool = False) -> EpisodeRecord:
    """One demonstration episode: the robot is ORCA-controlled while the
    crowd behaves exactly as during training (ignoring the robot when it is
    invisible). Rewards come from the standard reward cascade."""
    params = params or OrcaParams()
    return rollout(world, orca_robot_controller(params),
                   entity_policy(params), reward_config,
                   record_world=record_world)
