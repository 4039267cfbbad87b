import json

import numpy as np
import pytest

from entitynav.cli import main
from entitynav.config import ConfigError, build_setup, default_config, load_config


TINY = {
    "seed": 3,
    "scenario": {"counts": {"adult": 1, "child": 1}},
    "training": {"il_episodes": 2, "il_epochs": 1, "rl_episodes": 2,
                 "validation_interval": 2, "validation_size": 1,
                 "batch_size": 20},
}


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY))
    return path


class TestConfig:
    def test_profiles(self):
        desk = default_config("desk")
        paper = default_config("paper")
        assert desk["training"]["rl_episodes"] == 2000
        assert desk["training"]["il_episodes"] == 300
        assert desk["training"]["validation_interval"] == 256
        assert paper["training"]["rl_episodes"] == 50000
        assert paper["training"]["il_episodes"] == 3000
        assert paper["training"]["validation_interval"] == 1024
        assert paper["training"]["validation_size"] == 500
        with pytest.raises(ConfigError):
            default_config("galactic")

    def test_desk_profile_matches_acceptance_mix(self):
        desk = default_config("desk")
        assert desk["scenario"]["counts"] == {"adult": 3, "bicycle": 1,
                                              "child": 1, "obstacle": 0}
        assert desk["scenario"]["layout"] == "square"
        assert desk["scenario"]["side"] == 11.0
        assert desk["scenario"]["invisible_robot"] is True

    def test_user_config_merges_over_profile(self, tiny_config):
        cfg = load_config(tiny_config, "desk")
        assert cfg["training"]["rl_episodes"] == 2
        assert cfg["training"]["gamma"] == 0.9  # untouched default
        assert cfg["scenario"]["side"] == 11.0

    def test_build_setup_round_trip(self, tiny_config):
        setup = build_setup(load_config(tiny_config, "desk"))
        from entitynav.core import EntityType
        assert setup.base_seed == 3
        assert setup.scenario.counts[EntityType.ADULT] == 1
        assert setup.reward.t_max == setup.scenario.t_max
        assert setup.reward.dt == setup.scenario.dt

    def test_unknown_entity_type_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"scenario": {"counts": {"dragon": 1}}}))
        with pytest.raises(ConfigError):
            build_setup(load_config(path, "desk"))

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(path, "desk")


class TestCli:
    def test_bench_runs(self, tiny_config, capsys):
        rc = main(["bench", "--config", str(tiny_config), "--episodes", "2",
                   "--workers", "1"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "episodes_per_second=" in out
        assert "digest=" in out

    def test_bench_digest_reproducible(self, tiny_config, capsys):
        main(["bench", "--config", str(tiny_config), "--episodes", "2"])
        first = capsys.readouterr().out
        main(["bench", "--config", str(tiny_config), "--episodes", "2"])
        second = capsys.readouterr().out
        digest = lambda s: [l for l in s.splitlines() if l.startswith("digest=")]
        assert digest(first) == digest(second)

    def test_render_orca_episode(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "render"
        rc = main(["render", "--config", str(tiny_config), "--out", str(out),
                   "--trace"])
        assert rc == 0
        assert (out / "episode_3.svg").exists()
        assert (out / "episode_3.csv").exists()

    def test_evaluate_orca_with_assertions(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "eval"
        rc = main(["evaluate", "--config", str(tiny_config), "--episodes", "5",
                   "--out", str(out), "--assert", "SR>=0.0",
                   "--assert", "CR<=1.0"])
        assert rc == 0
        assert (out / "metrics.csv").exists()
        assert (out / "danger_histograms.svg").exists()
        rc = main(["evaluate", "--config", str(tiny_config), "--episodes", "5",
                   "--out", str(out), "--assert", "SR>=1.1"])
        assert rc == 3  # threshold failure exit code

    def test_missing_checkpoint_is_config_error(self, tiny_config, tmp_path):
        rc = main(["evaluate", "--config", str(tiny_config),
                   "--checkpoint", str(tmp_path / "missing.bin"),
                   "--out", str(tmp_path)])
        assert rc == 1

    def test_demo_then_train_pipeline(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "run"
        rc = main(["demo", "--config", str(tiny_config), "--episodes", "2",
                   "--out", str(out)])
        assert rc == 0
        demos = out / "demonstrations.npz"
        assert demos.exists()
        rc = main(["train", "--config", str(tiny_config), "--out", str(out),
                   "--demos", str(demos)])
        assert rc == 0
        assert (out / "il_only.bin").exists()
        assert (out / "best.bin").exists()
        assert (out / "training_log.csv").exists()
        assert (out / "run_config.json").exists()
        log = (out / "training_log.csv").read_text().splitlines()
        assert log[1].split(",")[0] == "episode"

    def test_demo_pairs_round_trip(self, tiny_config, tmp_path):
        from entitynav.cli import load_demo_pairs
        from entitynav.config import build_setup, load_config
        from entitynav.training import collect_demonstrations, monte_carlo_pairs
        out = tmp_path / "demo"
        main(["demo", "--config", str(tiny_config), "--episodes", "2",
              "--out", str(out)])
        setup = build_setup(load_config(tiny_config, "desk"))
        loaded = load_demo_pairs(out / "demonstrations.npz", setup)
        fresh = []
        for record in collect_demonstrations(setup, 2):
            fresh.extend(monte_carlo_pairs(record, setup.train.gamma, True))
        assert len(loaded) == len(fresh)
        for (li, lt), (fi, ft) in zip(loaded, fresh):
            assert lt == ft
            assert np.array_equal(li.rows, fi.rows)
            assert np.array_equal(li.robot, fi.robot)

    def test_train_evaluate_checkpoint(self, tiny_config, tmp_path):
        out = tmp_path / "run"
        main(["train", "--config", str(tiny_config), "--out", str(out)])
        rc = main(["evaluate", "--config", str(tiny_config), "--episodes", "3",
                   "--checkpoint", str(out / "best.bin"), "--out",
                   str(out / "eval")])
        assert rc == 0
