"""Tabular autoregressive policy and value table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax


@dataclass
class ToyPolicy:
    """Logits indexed by the last ``c`` tokens: shape ``(d**c, d)``."""

    logits: np.ndarray
    context_window: int
    vocab: int

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.logits.shape != (self.vocab ** self.context_window, self.vocab):
            raise ValueError(f"logits shape {self.logits.shape} does not match "
                             f"d={self.vocab}, c={self.context_window}")

    @classmethod
    def uniform(cls, d: int, c: int) -> ToyPolicy:
        return cls(np.zeros((d ** c, d)), c, d)

    def copy(self) -> ToyPolicy:
        return ToyPolicy(self.logits.copy(), self.context_window, self.vocab)

    def probs(self, contexts, temperature: float = 1.0) -> np.ndarray:
        """Next-token distributions for the given context ids."""
        z = self.logits[np.asarray(contexts)]
        if temperature != 1.0:
            z = z / temperature
        return softmax(z, axis=-1)

    def log_probs(self, contexts) -> np.ndarray:
        return log_softmax(self.logits[np.asarray(contexts)], axis=-1)

    def log_prob(self, contexts, actions) -> np.ndarray:
        lp = self.log_probs(contexts)
        return np.take_along_axis(lp, np.asarray(actions)[..., None], axis=-1)[..., 0]


@dataclass
class ValueFunction:
    """Value table over (response position, context id)."""

    table: np.ndarray

    @classmethod
    def zeros(cls, max_len: int, n_contexts: int) -> ValueFunction:
        return cls(np.zeros((max_len, n_contexts)))

    def copy(self) -> ValueFunction:
        return ValueFunction(self.table.copy())

    def __call__(self, positions, contexts) -> np.ndarray:
        return self.table[np.asarray(positions), np.asarray(contexts)]
