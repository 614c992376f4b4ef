"""Small analyses behind the ``motivate`` and ``penalty-corr`` subcommands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wpr.cost_kernel import EmbeddingTable, build_cost_matrix, build_sparse_kernel
from wpr.divergences import FKL, JS, RKL, divergence_value
from wpr.oracle import dense_entropic_reference, exact_ot
from wpr.penalty import PenaltyConfig, wpr_token_penalty
from wpr.sinkhorn import SinkhornConfig
from wpr.types import Distribution


@dataclass(frozen=True)
class MotivatingInstance:
    labels: tuple[str, ...]
    embeddings: EmbeddingTable
    pi_ref: Distribution
    pi_1: Distribution
    pi_2: Distribution


def motivating_instance(swap: bool = False) -> MotivatingInstance:
    """Four tokens on a line: cat, kitten (near cat), dog, table (far).

    The reference puts 0.7 on cat. The first alternative moves that mass to
    kitten, the second to table; both move the same amount of probability,
    so any f-divergence scores them alike while a transport cost does not.
    ``swap`` exchanges the two alternatives.
    """
    labels = ("cat", "kitten", "dog", "table")
    emb = EmbeddingTable(np.array([[0.0, 0.0], [0.3, 0.0], [1.5, 0.0], [4.0, 0.0]]), labels)
    ref = Distribution([0.7, 0.1, 0.1, 0.1])
    p1 = Distribution([0.1, 0.7, 0.1, 0.1])
    p2 = Distribution([0.1, 0.1, 0.1, 0.7])
    if swap:
        p1, p2 = p2, p1
    return MotivatingInstance(labels, emb, ref, p1, p2)


def expected_wpr_penalty(pi_theta: Distribution, pi_ref: Distribution, cfg: PenaltyConfig) -> float:
    """Exact ``sum_y pi_theta(y) phi(y)`` over the whole vocabulary."""
    total = 0.0
    for y in range(pi_theta.d):
        if pi_theta.probs[y] > 0:
            total += pi_theta.probs[y] * wpr_token_penalty(pi_theta, pi_ref, y, cfg).phi_value
    return float(total)


def motivate_rows(lam: float = 100.0, swap: bool = False) -> list[tuple[str, float, float]]:
    """Rows ``(quantity, value for pi_1, value for pi_2)``, each against the reference."""
    inst = motivating_instance(swap)
    cost = build_cost_matrix(inst.embeddings)
    kernel = build_sparse_kernel(cost, lam, inst.embeddings.d)
    # the expected penalty uses the raw potentials the trainer would see
    pcfg = PenaltyConfig(beta=1.0, k2=inst.embeddings.d, kernel=kernel, sinkhorn=SinkhornConfig(lam=lam))
    rows = []
    for name, kind in (("kl(ref||pi)", RKL), ("kl(pi||ref)", FKL), ("js", JS)):
        rows.append((name, divergence_value(kind, inst.pi_ref, inst.pi_1),
                     divergence_value(kind, inst.pi_ref, inst.pi_2)))
    rows.append(("wasserstein", exact_ot(inst.pi_ref, inst.pi_1, cost)[0],
                 exact_ot(inst.pi_ref, inst.pi_2, cost)[0]))
    rows.append((f"entropic(lambda={lam:g})",
                 dense_entropic_reference(inst.pi_1, inst.pi_ref, cost, lam)[0],
                 dense_entropic_reference(inst.pi_2, inst.pi_ref, cost, lam)[0]))
    rows.append(("expected_penalty", expected_wpr_penalty(inst.pi_1, inst.pi_ref, pcfg),
                 expected_wpr_penalty(inst.pi_2, inst.pi_ref, pcfg)))
    return rows


def joint_minmax(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Rescale both series with one shared min and max."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    span = hi - lo
    if span == 0:
        return np.zeros_like(a), np.zeros_like(b)
    return (a - lo) / span, (b - lo) / span


def penalty_correlation(kl, w) -> tuple[float, float]:
    """Pearson ``r`` and least-squares slope of ``w`` on ``kl`` after joint normalization.

    A constant series gives ``r = nan``; a constant ``kl`` also gives
    ``slope = nan``.
    """
    x, y = joint_minmax(kl, w)
    if x.size < 2:
        return float("nan"), float("nan")
    sx, sy = x.std(), y.std()
    if sx == 0 or sy == 0:
        r = float("nan")
    else:
        r = float(np.mean((x - x.mean()) * (y - y.mean())) / (sx * sy))
    slope = float(np.polyfit(x, y, 1)[0]) if sx > 0 else float("nan")
    return r, slope
