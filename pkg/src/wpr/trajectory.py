"""Per-response rollout record shared by the penalty and training code."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass
class Trajectory:
    """One sampled response and its per-step training quantities.

    Every per-step vector has length ``N = len(response)``. ``pi_theta`` and
    ``pi_ref`` hold the full next-token distributions at each step, shape
    ``(N, d)``. ``reward`` follows the terminal convention: zero everywhere
    except the last step, which carries the sequence reward.
    """

    prompt: np.ndarray
    response: np.ndarray
    contexts: np.ndarray
    pi_theta: np.ndarray
    pi_ref: np.ndarray
    reward: np.ndarray
    penalized_reward: np.ndarray
    value: np.ndarray
    log_prob_current: np.ndarray
    log_prob_old: np.ndarray
    advantage: np.ndarray = field(default_factory=lambda: np.zeros(0))
    return_target: np.ndarray = field(default_factory=lambda: np.zeros(0))
    penalty: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        n = len(self.response)
        if not len(self.advantage):
            self.advantage = np.zeros(n)
        if not len(self.return_target):
            self.return_target = np.zeros(n)
        if not len(self.penalty):
            self.penalty = np.zeros(n)
        for name in ("contexts", "reward", "penalized_reward", "value", "log_prob_current",
                     "log_prob_old", "advantage", "return_target", "penalty"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        for name in ("pi_theta", "pi_ref"):
            if np.shape(getattr(self, name))[0] != n:
                raise ValueError(f"{name} needs one row per response step")

    def __len__(self) -> int:
        return len(self.response)

    def with_updates(self, **changes) -> Trajectory:
        return replace(self, **changes)

    @classmethod
    def empty(cls, prompt, d: int) -> Trajectory:
        z = np.zeros(0)
        return cls(prompt=np.asarray(prompt), response=np.zeros(0, dtype=np.int64),
                   contexts=np.zeros(0, dtype=np.int64), pi_theta=np.zeros((0, d)),
                   pi_ref=np.zeros((0, d)), reward=z, penalized_reward=z.copy(),
                   value=z.copy(), log_prob_current=z.copy(), log_prob_old=z.copy())
