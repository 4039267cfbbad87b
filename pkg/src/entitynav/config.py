"""Run configuration: JSON files with scenario / reward / orca / network /
training sections, plus the two shipped profiles (`desk` and `paper`)."""

from __future__ import annotations

import json
from dataclasses import asdict

from .core import EntityType
from .dynamics import CircleCrossing, ScenarioConfig, SquareCrossing
from .orca import OrcaParams
from .reward import RewardConfig
from .training import RunSetup, TrainConfig


class ConfigError(ValueError):
    pass


TYPE_KEYS = {e.name.lower(): e for e in EntityType}


def _type_map(section: dict, what: str) -> dict[EntityType, float]:
    out = {}
    for key, value in section.items():
        if key not in TYPE_KEYS:
            raise ConfigError(f"unknown entity type {key!r} in {what}")
        out[TYPE_KEYS[key]] = value
    return out


def default_config(profile: str = "desk") -> dict:
    """Full config dict for a shipped profile."""
    base = {
        "seed": 0,
        "workers": 1,
        "include_entity_type": True,
        "scenario": {
            "layout": "square",
            "side": 11.0,
            "circle_radius": 6.0,
            "counts": {"adult": 3, "bicycle": 1, "child": 1, "obstacle": 0},
            "invisible_robot": True,
            "robot_radius": 0.3,
            "robot_v_pref": 1.0,
            "dt": 0.25,
            "t_max": 30.0,
            "radius_range": {"adult": [0.25, 0.40], "child": [0.15, 0.30],
                             "bicycle": [0.35, 0.60], "obstacle": [0.2, 0.5]},
            "vpref_range": {"adult": [0.8, 1.4], "child": [0.6, 1.6],
                            "bicycle": [1.2, 2.4], "obstacle": [0.0, 0.0]},
        },
        "reward": {
            "collision_penalty": {"obstacle": -0.5, "adult": -1.0,
                                  "bicycle": -1.5, "child": -2.0},
            "discomfort_distance": {"adult": 0.1, "bicycle": 0.2, "child": 0.2},
            "discomfort_factor": {"adult": 0.5, "bicycle": 1.0, "child": 1.0},
            "t_good": 20.0,
        },
        "orca": {"time_horizon": 5.0, "time_horizon_obstacle": 5.0,
                 "neighbor_distance": 10.0, "max_neighbors": 10,
                 "safety_buffer": 0.01},
        "training": {
            "il_episodes": 3000, "il_epochs": 50, "il_lr": 0.01,
            "rl_lr": 0.001, "gamma": 0.9, "batch_size": 100,
            "rl_episodes": 50000, "epsilon_start": 0.5, "epsilon_end": 0.1,
            "epsilon_decay_episodes": 5000, "target_update_interval": 50,
            "validation_interval": 1024, "validation_size": 500,
            "replay_capacity": 100000,
        },
    }
    if profile == "paper":
        # crowd mix for full-scale runs; the desk profile is the scaled check
        base["scenario"]["counts"] = {"adult": 4, "bicycle": 2, "child": 2,
                                      "obstacle": 2}
        return base
    if profile == "desk":
        base["training"].update({
            "il_episodes": 300, "rl_episodes": 2000,
            "epsilon_decay_episodes": 1500,
            "validation_interval": 256, "validation_size": 100,
        })
        return base
    raise ConfigError(f"unknown profile {profile!r} (expected desk or paper)")


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, profile: str = "desk",
                overrides: dict | None = None) -> dict:
    cfg = default_config(profile)
    if path is not None:
        with open(path) as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        cfg = _deep_merge(cfg, user)
    if overrides:
        cfg = _deep_merge(cfg, overrides)
    return cfg


def build_setup(cfg: dict) -> RunSetup:
    """Config dict -> the dataclass bundle the library operates on."""
    sc = cfg["scenario"]
    if sc["layout"] == "square":
        layout = SquareCrossing(sc["side"])
    elif sc["layout"] == "circle":
        layout = CircleCrossing(sc["circle_radius"])
    else:
        raise ConfigError(f"unknown layout {sc['layout']!r}")
    scenario = ScenarioConfig(
        layout=layout,
        counts={k: v for k, v in _type_map(sc["counts"], "counts").items()},
        radius_range={k: tuple(v) for k, v in
                      _type_map(sc["radius_range"], "radius_range").items()},
        vpref_range={k: tuple(v) for k, v in
                     _type_map(sc["vpref_range"], "vpref_range").items()},
        invisible_robot=sc["invisible_robot"],
        robot_radius=sc["robot_radius"],
        robot_v_pref=sc["robot_v_pref"],
        dt=sc["dt"],
        t_max=sc["t_max"],
    )
    rw = cfg["reward"]
    reward = RewardConfig(
        collision_penalty=_type_map(rw["collision_penalty"], "collision_penalty"),
        discomfort_distance=_type_map(rw["discomfort_distance"], "discomfort_distance"),
        discomfort_factor=_type_map(rw["discomfort_factor"], "discomfort_factor"),
        t_good=rw["t_good"], t_max=sc["t_max"], dt=sc["dt"])
    orca = OrcaParams(**cfg["orca"])
    train = TrainConfig(workers=cfg.get("workers", 1), **cfg["training"])
    return RunSetup(scenario=scenario, reward=reward, orca=orca, train=train,
                    include_entity_type=cfg.get("include_entity_type", True),
                    network_seed=cfg.get("seed", 0),
                    base_seed=cfg.get("seed", 0))


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
