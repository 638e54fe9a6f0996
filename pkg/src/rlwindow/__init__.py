"""Adaptive sliding-window sizing for multi-dimensional data streams.

A from-scratch dueling double DQN with prioritized replay learns to pick
the window size per tick; ADWIN-driven and fixed-size policies serve as
baselines, and a seeded harness compares them under injected concept drift.
"""

from .agent import (AgentConfig, DEFAULT_ACTIONS, DQNAgent, RewardWeights,
                    Schedules, Transition, compute_reward)
from .baselines import AdwinDetector, AdwinWindowPolicy, FixedWindowPolicy, streamx_config
from .classifier import SoftmaxClassifier, WindowSummary, summarize
from .features import (FeatureNormalizer, FeatureWindow, build_state,
                       build_streamx_state, state_length)
from .harness import RunConfig, ablation_suite, config_from_dict, load_config, run
from .metrics import RunMetrics, TickLog, drift_split_metrics
from .nn import Adam, QNetwork, grad_check, lr_schedule
from .replay import ReplayBuffer, SumTree
from .runner import EpisodeConfig, RLWindowPolicy, run_episode
from .stream import (CsvSchema, DriftSpec, ReorderBuffer, StreamEvent,
                     load_csv_stream, synth_stream, write_csv)

__version__ = "0.1.0"
