"""Entity-aware crowd navigation laboratory.

A typed 2D multi-agent simulator with ORCA-controlled crowds, an
entity-based reward cascade, a social-attention value network with its own
backward pass, parallel deep V-learning, and an evaluation harness.
"""

from .core import (Action, AgentState, EntityType, JointState,
                   RobotStateVector, EntityObservation, build_action_space,
                   one_hot, to_robot_frame)
from .dynamics import (CircleCrossing, EpisodeRecord, ScenarioConfig,
                       SquareCrossing, StepEvents, WorldState,
                       episode_status, generate_scenario, min_separation,
                       rollout, step)
from .orca import OrcaParams, demonstrate_episode, orca_velocity
from .planner import PolicyConfig, propagate, select_action
from .reward import (RewardConfig, discomfort_penalty, proximity_reward,
                     reward, time_reward)
from .training import (ReplayBuffer, RunSetup, TrainConfig, epsilon_schedule,
                       imitation_learning, parallel_v_learning, run_episode,
                       train_full)
from .valuenet import (NetworkInput, ValueNetwork, joint_state_to_input,
                       load_checkpoint, save_checkpoint)
from .eval import (Metrics, danger_histogram, evaluate, weighted_score,
                   write_metrics_csv, write_trace_csv, render_trajectory_svg)

__version__ = "0.1.0"
