"""Shared numeric containers for distributions, costs, kernels, couplings and duals.

Everything is float64. Containers are frozen dataclasses whose arrays are
marked read-only on construction so they can be shared between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.sparse as sp

from wpr.errors import NegativeMass, NotNormalizable

LOG_FLOOR = 1e-30
"""Floor applied to probabilities, denominators and log arguments."""

SUM_TOL = 1e-9
RENORM_TOL = 1e-6
NEG_TOL = 1e-12

Metric = Literal["euclidean", "cosine"]


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Distribution:
    """Probability vector over a vocabulary of size ``d``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 1 or p.size == 0:
            raise NotNormalizable("distribution must be a non-empty vector")
        if np.any(p < 0):
            raise NegativeMass(f"negative entry {p.min():.3e}")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise NotNormalizable(f"sum {p.sum():.12f} is not 1")
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size

    @property
    def d(self) -> int:
        return self.probs.size


def validate_distribution(raw) -> Distribution:
    """Check a raw vector and return it as a normalized :class:`Distribution`.

    Entries in ``[-1e-12, 0)`` are treated as round-off and set to zero. A sum
    within ``1e-6`` of one is renormalized; anything further off is rejected.
    """
    x = np.asarray(raw, dtype=np.float64).ravel()
    if x.size == 0:
        raise NotNormalizable("empty vector")
    if not np.all(np.isfinite(x)):
        raise NotNormalizable("non-finite entry")
    if np.any(x < -NEG_TOL):
        i = int(np.argmin(x))
        raise NegativeMass(f"entry {i} is {x[i]:.3e}")
    x = np.clip(x, 0.0, None)
    s = x.sum()
    if s <= 0 or abs(s - 1.0) >= RENORM_TOL:
        raise NotNormalizable(f"sum {s:.12g} deviates from 1 by >= {RENORM_TOL}")
    return Distribution(x / s)


@dataclass(frozen=True)
class CostMatrix:
    """Symmetric nonnegative ground cost with zero diagonal."""

    entries: np.ndarray
    metric_tag: str = "euclidean"

    def __post_init__(self):
        c = np.array(self.entries, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("cost matrix must be square")
        if np.any(c < 0):
            raise ValueError("cost entries must be nonnegative")
        if np.any(np.diag(c) != 0):
            raise ValueError("cost diagonal must be zero")
        if not np.array_equal(c, c.T):
            raise ValueError("cost matrix must be symmetric")
        c.setflags(write=False)
        object.__setattr__(self, "entries", c)

    @property
    def d(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True)
class SparseKernel:
    """Truncated Gibbs kernel ``exp(-lambda * C)``.

    ``kernel`` holds the retained entries (pruned pairs are structural zeros,
    i.e. infinite cost). ``pattern`` is the nearest-k1 mirrored support before
    underflow pruning; the log-domain solver works from ``pattern`` and
    ``cost`` so that large ``lambda`` does not lose entries.
    """

    kernel: sp.csr_matrix
    lam: float
    k1: int
    pattern: sp.csr_matrix
    cost: CostMatrix
    warnings: tuple[str, ...] = ()

    @property
    def d(self) -> int:
        return self.kernel.shape[0]

    @cached_property
    def dense_kernel(self) -> np.ndarray:
        k = self.kernel.toarray()
        k.setflags(write=False)
        return k

    @cached_property
    def dense_pattern(self) -> np.ndarray:
        m = self.pattern.toarray()
        m.setflags(write=False)
        return m

    def log_kernel(self) -> np.ndarray:
        """Dense ``-lambda * C`` on the retained pattern, ``-inf`` elsewhere."""
        out = np.full((self.d, self.d), -np.inf)
        mask = self.dense_pattern
        out[mask] = -self.lam * self.cost.entries[mask]
        return out


@dataclass(frozen=True)
class Coupling:
    plan: np.ndarray

    def __post_init__(self):
        p = _frozen(self.plan)
        if np.any(p < 0):
            raise ValueError("coupling entries must be nonnegative")
        object.__setattr__(self, "plan", p)

    def row_sums(self) -> np.ndarray:
        return self.plan.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.plan.sum(axis=0)


@dataclass(frozen=True)
class DualSolution:
    """Sinkhorn scalings and the dual potentials they encode.

    The potentials satisfy ``u = exp(lam * phi)`` and ``v = exp(lam * psi)``,
    so that the optimal plan is ``exp(lam * (phi_i + psi_j - C_ij))``.
    """

    u: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    lam: float
    iterations: int
    converged: bool
    final_delta: float
    history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        for name in ("u", "v", "phi", "psi"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
