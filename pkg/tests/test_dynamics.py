import math
from dataclasses import replace

import numpy as np
import pytest

from entitynav.core import Action, AgentState, EntityType
from entitynav.dynamics import (CircleCrossing, ScenarioConfig,
                                ScenarioGenerationError, SquareCrossing,
                                StepEvents, episode_status, generate_scenario,
                                min_separation, rollout, step)
from entitynav.orca import OrcaParams, entity_policy
from entitynav.reward import RewardConfig

A, B, C, O = (EntityType.ADULT, EntityType.BICYCLE, EntityType.CHILD,
              EntityType.OBSTACLE)


def sampled_min_separation(pa, va, ra, pb, vb, rb, dt, substeps=10_000):
    """Dense-sampling oracle: evaluate the separation on a fine grid."""
    s = np.linspace(0.0, dt, substeps + 1)
    rel = (np.asarray(pb) - np.asarray(pa))[None, :] \
        + s[:, None] * (np.asarray(vb) - np.asarray(va))[None, :]
    return float(np.linalg.norm(rel, axis=1).min()) - (ra + rb)


class TestMinSeparation:
    def test_static_discs(self):
        assert min_separation((0, 0), (0, 0), 0.5, (3, 0), (0, 0), 0.5,
                              0.25) == pytest.approx(2.0)

    def test_head_on_symmetric_closure(self):
        sep = min_separation((0, 0), (1, 0), 0.3, (1, 0), (-1, 0), 0.3, 1.0)
        assert sep == pytest.approx(-0.6)

    def test_against_sampling_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            pa, pb = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
            va, vb = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            ra, rb = rng.uniform(0.1, 0.6, 2)
            dt = rng.uniform(0.05, 1.0)
            closed = min_separation(pa, va, ra, pb, vb, rb, dt)
            sampled = sampled_min_separation(pa, va, ra, pb, vb, rb, dt)
            assert abs(closed - sampled) < 1e-3

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            pa, pb = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
            va, vb = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            ab = min_separation(pa, va, 0.3, pb, vb, 0.4, 0.25)
            ba = min_separation(pb, vb, 0.4, pa, va, 0.3, 0.25)
            assert ab == pytest.approx(ba, abs=1e-12)

    def test_translation_rotation_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            pa, pb = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
            va, vb = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            base = min_separation(pa, va, 0.3, pb, vb, 0.4, 0.5)
            shift = rng.uniform(-10, 10, 2)
            theta = rng.uniform(0, 2 * math.pi)
            rot = np.array([[math.cos(theta), -math.sin(theta)],
                            [math.sin(theta), math.cos(theta)]])
            moved = min_separation(rot @ pa + shift, rot @ va, 0.3,
                                   rot @ pb + shift, rot @ vb, 0.4, 0.5)
            assert moved == pytest.approx(base, abs=1e-9)

    def test_zero_velocities_equal_static_distance(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            pa, pb = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
            sep = min_separation(pa, (0, 0), 0.2, pb, (0, 0), 0.3, 0.7)
            assert sep == float(np.linalg.norm(pb - pa)) - 0.5


def desk_scenario(seed=0, counts=None, layout=None):
    return ScenarioConfig(
        layout=layout or SquareCrossing(11.0),
        counts=counts if counts is not None else {A: 3, B: 1, C: 1},
        rng_seed=seed)


class TestGenerateScenario:
    def test_circle_goal_opposite(self):
        cfg = ScenarioConfig(layout=CircleCrossing(6.0), counts={A: 1},
                             rng_seed=3)
        world = generate_scenario(cfg)
        ent = world.entities[0]
        assert np.linalg.norm(ent.position) == pytest.approx(6.0)
        assert np.allclose(ent.goal, -ent.position)
        assert np.linalg.norm(ent.goal - ent.position) == pytest.approx(12.0)

    def test_empty_crowd(self):
        cfg = desk_scenario(counts={})
        world = generate_scenario(cfg)
        assert world.entities == []
        assert np.allclose(world.robot.position, [0.0, -5.5])
        assert np.allclose(world.robot.goal, [0.0, 5.5])
        assert world.d_max == pytest.approx(11.0)

    def test_seeded_determinism(self):
        w1 = generate_scenario(desk_scenario(seed=42))
        w2 = generate_scenario(desk_scenario(seed=42))
        for a, b in zip([w1.robot] + w1.entities, [w2.robot] + w2.entities):
            assert np.array_equal(a.position, b.position)
            assert a.radius == b.radius and a.v_pref == b.v_pref
            assert np.array_equal(a.goal, b.goal)

    def test_square_starts_on_perimeter_goals_opposite(self):
        world = generate_scenario(desk_scenario(seed=5, counts={A: 4}))
        half = 5.5
        for ent in world.entities:
            on_edge_start = (abs(abs(ent.position[0]) - half) < 1e-9
                             or abs(abs(ent.position[1]) - half) < 1e-9)
            assert on_edge_start
            # goal sits on the mirrored side
            if abs(abs(ent.position[0]) - half) < 1e-9:
                assert ent.goal[0] == pytest.approx(-ent.position[0])
            else:
                assert ent.goal[1] == pytest.approx(-ent.position[1])

    def test_obstacles_are_stationary(self):
        world = generate_scenario(desk_scenario(seed=1, counts={O: 3}))
        for ent in world.entities:
            assert ent.v_pref == 0.0
            assert np.allclose(ent.velocity, 0.0)
            assert np.allclose(ent.goal, ent.position)

    def test_initial_clearance(self):
        world = generate_scenario(desk_scenario(seed=10, counts={A: 5, O: 2}))
        agents = [world.robot] + world.entities
        for i in range(len(agents)):
            for j in range(i + 1, len(agents)):
                gap = (np.linalg.norm(agents[i].position - agents[j].position)
                       - agents[i].radius - agents[j].radius)
                assert gap >= 0.2 - 1e-12

    def test_per_type_sampling_ranges(self):
        world = generate_scenario(desk_scenario(seed=3, counts={A: 5, B: 3, C: 4}))
        cfg = desk_scenario()
        for ent in world.entities:
            r_lo, r_hi = cfg.radius_range[ent.entity_type]
            v_lo, v_hi = cfg.vpref_range[ent.entity_type]
            assert r_lo <= ent.radius <= r_hi
            assert v_lo <= ent.v_pref <= v_hi

    def test_placement_failure_raises(self):
        crowded = desk_scenario(counts={O: 500})
        with pytest.raises(ScenarioGenerationError):
            generate_scenario(crowded)


def still_policy(agent, neighbors, dt):
    return np.zeros(2)


class TestStep:
    def test_euler_integration(self):
        world = generate_scenario(desk_scenario(counts={}))
        new_world, _ = step(world, Action(1.0, 0.0), still_policy)
        assert np.allclose(new_world.robot.position,
                           world.robot.position + [0.25, 0.0])
        assert new_world.t == pytest.approx(0.25)

    def test_invisible_robot_ignored_by_orca_entity(self):
        # single adult with the robot parked right in its path
        world = generate_scenario(desk_scenario(counts={A: 1}, seed=2))
        ent = world.entities[0]
        robot = world.robot.moved(ent.position + 0.7 * (ent.goal - ent.position)
                                  / np.linalg.norm(ent.goal - ent.position),
                                  np.zeros(2))
        world = replace(world, robot=robot, invisible_robot=True)
        new_world, _ = step(world, Action(0.0, 0.0),
                            entity_policy(OrcaParams()))
        moved = new_world.entities[0].position - ent.position
        direction = (ent.goal - ent.position) / np.linalg.norm(ent.goal - ent.position)
        # full preferred speed straight to its goal, robot notwithstanding
        assert np.allclose(moved, direction * ent.v_pref * world.dt, atol=1e-9)

    def test_head_on_child_collision_events(self):
        world = generate_scenario(desk_scenario(counts={}))
        child = AgentState(position=world.robot.position + [1.0, 0.0],
                           velocity=np.array([-1.0, 0.0]), radius=0.3,
                           goal=world.robot.position - [5.0, 0.0], v_pref=1.0,
                           heading=math.pi, entity_type=C)
        world = replace(world, entities=[child])
        new_world, events = step(world, Action(1.0, 0.0),
                                 lambda a, n, dt: a.velocity)
        # closing speed 2 m/s over 0.25 s from 1 m gap: 0.5m left between
        # centers minus 0.6m radii -> contact
        assert events.separations[C] < 0
        assert events.closest_type == C
        assert episode_status(events).kind == "collision"
        assert episode_status(events).collision_type == C

    def test_events_use_prestep_positions_and_applied_velocities(self):
        world = generate_scenario(desk_scenario(counts={}))
        adult = AgentState(position=world.robot.position + [3.0, 0.0],
                           velocity=np.zeros(2), radius=0.3,
                           goal=world.robot.position + [3.0, 0.0], v_pref=1.0,
                           heading=0.0, entity_type=A)
        world = replace(world, entities=[adult])
        _, events = step(world, Action(1.0, 0.0), still_policy)
        expected = min_separation(world.robot.position, [1.0, 0.0],
                                  world.robot.radius, adult.position, [0, 0],
                                  adult.radius, world.dt)
        assert events.separations[A] == pytest.approx(expected, abs=1e-12)

    def test_reached_goal_flag(self):
        world = generate_scenario(desk_scenario(counts={}))
        near_goal = world.robot.moved(world.robot.goal - [0.0, 0.4],
                                      np.zeros(2))
        world = replace(world, robot=near_goal)
        _, events = step(world, Action(1.0, math.pi / 2), still_policy)
        assert events.reached_goal
        assert episode_status(events).kind == "reached_goal"

    def test_timeout_flag(self):
        world = generate_scenario(desk_scenario(counts={}))
        world = replace(world, t=world.t_max - world.dt)
        _, events = step(world, Action(0.1, 0.0), still_policy)
        assert events.timed_out
        assert not events.reached_goal
        assert episode_status(events).kind == "timeout"

    def test_timeout_never_cooccurs_with_goal(self):
        world = generate_scenario(desk_scenario(counts={}))
        near_goal = world.robot.moved(world.robot.goal - [0.0, 0.2], np.zeros(2))
        world = replace(world, robot=near_goal, t=world.t_max - world.dt)
        _, events = step(world, Action(1.0, math.pi / 2), still_policy)
        assert events.reached_goal and not events.timed_out

    def test_collision_takes_precedence_over_goal(self):
        events = StepEvents(separations={e: math.inf for e in EntityType} | {B: -0.1},
                            d_min=-0.1, closest_type=B, reached_goal=True,
                            timed_out=False)
        status = episode_status(events)
        assert status.kind == "collision" and status.collision_type == B

    def test_running_default(self):
        events = StepEvents(separations={e: math.inf for e in EntityType},
                            d_min=math.inf, closest_type=None,
                            reached_goal=False, timed_out=False)
        assert episode_status(events).kind == "running"


class TestRollout:
    def test_straight_line_empty_world(self):
        world = generate_scenario(desk_scenario(counts={}))
        record = rollout(world, lambda w, s: Action(1.0, math.pi / 2),
                         still_policy, RewardConfig())
        assert record.status.kind == "reached_goal"
        # 11m at 1 m/s minus the goal radius, quantized to dt
        assert record.t_final == pytest.approx(10.75, abs=0.25)
        assert record.steps[-1].reward == pytest.approx(2.0)
        assert all(s.reward == 0.0 for s in record.steps[:-1])

    def test_deterministic_trajectory(self):
        def run():
            world = generate_scenario(desk_scenario(seed=12))
            return rollout(world, lambda w, s: Action(0.8, math.pi / 2),
                           entity_policy(OrcaParams()), RewardConfig())
        r1, r2 = run(), run()
        assert r1.status == r2.status
        assert [s.reward for s in r1.steps] == [s.reward for s in r2.steps]
        for s1, s2 in zip(r1.steps, r2.steps):
            assert s1.state.robot.as_array().tolist() == s2.state.robot.as_array().tolist()

    def test_time_is_multiple_of_dt(self):
        world = generate_scenario(desk_scenario(seed=4))
        record = rollout(world, lambda w, s: Action(0.5, math.pi / 2),
                         entity_policy(OrcaParams()), RewardConfig())
        for srec in record.steps:
            ratio = srec.t_after / world.dt
            assert abs(ratio - round(ratio)) < 1e-9
