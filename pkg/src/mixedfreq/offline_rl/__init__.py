"""Conservative Q-learning over mixed-discretization datasets."""

from .agent import (Actor, NonFiniteLossError, QPair, actor_loss, bc_loss, cql_loss, deterministic_action, init_agent,
                    nstep_target, polyak_update, sample_actions, state_input, target_value)
from .evaluate import evaluate, evaluate_episodes, q_heatmap, swingup_policy
from .targets import (RULES, Batch, FlatData, TargetSpec, adaptive_backup_length, backup_lengths, make_batch,
                      max_backup_length, nstep_backup)
from .train import METRIC_COLUMNS, MetricsWriter, TrainConfig, TrainResult, read_metrics, train

__all__ = [
    "Actor", "Batch", "FlatData", "METRIC_COLUMNS", "MetricsWriter", "NonFiniteLossError", "QPair", "RULES",
    "TargetSpec", "TrainConfig", "TrainResult", "actor_loss", "bc_loss", "adaptive_backup_length", "backup_lengths",
    "cql_loss", "deterministic_action", "evaluate", "evaluate_episodes", "init_agent", "make_batch",
    "max_backup_length", "nstep_backup", "nstep_target", "polyak_update", "q_heatmap", "read_metrics",
    "sample_actions", "state_input", "swingup_policy", "target_value", "train",
]
