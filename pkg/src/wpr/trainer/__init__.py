"""Desk-scale regularized PPO on a synthetic token environment."""

from wpr.trainer.env import SyntheticEnv, make_env
from wpr.trainer.loop import (
    METRIC_FIELDS,
    Regularizer,
    TrainConfig,
    TrainResult,
    fit_reference,
    mean_policy_reward,
    sample_trajectories,
    train,
)
from wpr.trainer.policy import ToyPolicy, ValueFunction
from wpr.trainer.ppo import (
    clipped_surrogate,
    gae_advantages,
    ppo_policy_update,
    value_loss,
    value_update,
)

__all__ = [
    "METRIC_FIELDS", "Regularizer", "SyntheticEnv", "ToyPolicy", "TrainConfig", "TrainResult",
    "ValueFunction", "clipped_surrogate", "fit_reference", "gae_advantages", "make_env",
    "mean_policy_reward", "ppo_policy_update", "sample_trajectories", "train", "value_loss",
    "value_update",
]
