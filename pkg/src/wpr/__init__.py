"""Token-level Wasserstein penalties for policy-gradient fine-tuning.

The package solves small entropic optimal-transport problems between a
policy's next-token distribution and a reference distribution and turns the
dual potential of the sampled token into a per-token reward penalty.
"""

from __future__ import annotations

from wpr.cost_kernel import EmbeddingTable, build_cost_matrix, build_sparse_kernel
from wpr.divergences import DivergenceKind, divergence_value, token_penalty
from wpr.errors import (
    ConfigError,
    DisconnectedSupport,
    DomainError,
    MissingSeries,
    NegativeMass,
    NonConvergence,
    NotNormalizable,
    NumericalBlowup,
    WPRError,
    ZeroVectorCosine,
)
from wpr.oracle import dense_entropic_reference, exact_ot, one_d_wasserstein
from wpr.penalty import PenaltyConfig, PenaltyRecord, apply_penalties, penalty_batch, wpr_token_penalty
from wpr.sinkhorn import SinkhornConfig, sinkhorn_batch, sinkhorn_solve, solve_truncated
from wpr.types import CostMatrix, Coupling, Distribution, DualSolution, SparseKernel

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CostMatrix", "Coupling", "DisconnectedSupport", "DivergenceKind", "DomainError",
    "DualSolution", "Distribution", "EmbeddingTable", "MissingSeries", "NegativeMass",
    "NonConvergence", "NotNormalizable", "NumericalBlowup", "PenaltyConfig", "PenaltyRecord",
    "SinkhornConfig", "SparseKernel", "WPRError", "ZeroVectorCosine", "apply_penalties",
    "build_cost_matrix", "build_sparse_kernel", "dense_entropic_reference", "divergence_value",
    "exact_ot", "one_d_wasserstein", "penalty_batch", "sinkhorn_batch", "sinkhorn_solve",
    "solve_truncated", "token_penalty", "wpr_token_penalty",
]
