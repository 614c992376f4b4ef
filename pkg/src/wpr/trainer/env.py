"""Synthetic token environment with planted embedding geometry.

Tokens live in the plane. Cluster A sits at the origin and is what the
reference policy is fit to prefer; cluster B sits a short hop away and is what
the reward model likes; the remaining tokens are distractors scattered on a
far ring. The reward of a response is the mean affinity of its tokens to
cluster B minus a repetition penalty, clipped to ``[-1, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wpr.cost_kernel import EmbeddingTable


@dataclass(frozen=True)
class SyntheticEnv:
    embeddings: EmbeddingTable
    cluster_a: np.ndarray
    cluster_b: np.ndarray
    prompts: np.ndarray
    context_window: int = 2
    max_response_len: int = 8
    affinity_width: float = 0.15
    repetition_weight: float = 0.5
    teacher_sharpness: float = 2.0
    teacher_b_mass: float = 0.05
    seed: int = 0

    @property
    def d(self) -> int:
        return self.embeddings.d

    @property
    def center_b(self) -> np.ndarray:
        return self.embeddings.vectors[self.cluster_b].mean(axis=0)

    def affinity(self, tokens) -> np.ndarray:
        """Score in ``[-1, 1]``: near ``+1`` inside cluster B, ``-1`` far away."""
        e = self.embeddings.vectors[np.asarray(tokens)]
        sq = np.sum((e - self.center_b) ** 2, axis=-1)
        return 2.0 * np.exp(-sq / (2.0 * self.affinity_width ** 2)) - 1.0

    def reward(self, response) -> float:
        """Sequence reward of a full response; ``0`` for an empty one."""
        y = np.asarray(response)
        if y.size == 0:
            return 0.0
        repeats = (y.size - np.unique(y).size) / y.size
        r = float(np.mean(self.affinity(y))) - self.repetition_weight * repeats
        return float(np.clip(r, -1.0, 1.0))

    def context_id(self, window) -> int:
        """Row index of the tabular policy for the last ``c`` tokens."""
        idx = 0
        for t in window[-self.context_window:]:
            idx = idx * self.d + int(t)
        return idx

    @property
    def n_contexts(self) -> int:
        return self.d ** self.context_window

    def teacher_probs(self, context: int) -> np.ndarray:
        """Preferred next-token distribution.

        Mostly a peaked distribution over cluster A, with its own preference
        order per context drawn from a generator keyed by ``(seed, context)``;
        ``teacher_b_mass`` is spread evenly over cluster B.
        """
        rng = np.random.default_rng([self.seed, 7, int(context)])
        logits = self.teacher_sharpness * rng.standard_normal(self.cluster_a.size)
        w = np.exp(logits - logits.max())
        p = np.zeros(self.d)
        p[self.cluster_a] = (1.0 - self.teacher_b_mass) * w / w.sum()
        p[self.cluster_b] = self.teacher_b_mass / self.cluster_b.size
        return p


def make_env(d: int = 64, seed: int = 0, n_prompts: int = 32, context_window: int = 2,
             max_response_len: int = 8, cluster_size: int = 16,
             embeddings: EmbeddingTable | None = None) -> SyntheticEnv:
    """Build the default environment.

    Clusters A and B take ``cluster_size`` tokens each; with user-supplied
    ``embeddings`` the first ``cluster_size`` tokens form A and the next
    ``cluster_size`` form B.
    """
    rng = np.random.default_rng([seed, 1])
    if 2 * cluster_size >= d:
        raise ValueError("vocabulary too small for two clusters plus distractors")
    a = np.arange(cluster_size)
    b = np.arange(cluster_size, 2 * cluster_size)
    if embeddings is None:
        vec = np.empty((d, 2))
        vec[a] = rng.normal(0.0, 0.05, size=(cluster_size, 2))
        vec[b] = np.array([0.3, 0.0]) + rng.normal(0.0, 0.05, size=(cluster_size, 2))
        rest = d - 2 * cluster_size
        angle = rng.uniform(0.0, 2 * np.pi, rest)
        radius = rng.uniform(2.0, 4.0, rest)
        vec[2 * cluster_size:] = np.c_[radius * np.cos(angle), radius * np.sin(angle)]
        embeddings = EmbeddingTable(vec)
    elif embeddings.d != d:
        raise ValueError(f"embedding table has {embeddings.d} rows, expected {d}")
    prompts = rng.integers(0, d, size=(n_prompts, context_window))
    return SyntheticEnv(embeddings=embeddings, cluster_a=a, cluster_b=b, prompts=prompts,
                        context_window=context_window, max_response_len=max_response_len,
                        seed=seed)
