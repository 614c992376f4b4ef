"""Wall-clock timing of a single per-token truncated solve."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from wpr.cost_kernel import EmbeddingTable, build_cost_matrix, build_sparse_kernel
from wpr.sinkhorn import SinkhornConfig, build_truncated_problem, solve_truncated
from wpr.types import Distribution


@dataclass(frozen=True)
class Timing:
    d: int
    k2: int
    lam: float
    iterations: int
    repeats: int
    median_ms: float
    p90_ms: float
    min_ms: float

    def line(self) -> str:
        return (f"d={self.d} k2={self.k2} lambda={self.lam:g} iters={self.iterations} "
                f"repeats={self.repeats} median_ms={self.median_ms:.3f} "
                f"p90_ms={self.p90_ms:.3f} min_ms={self.min_ms:.3f}")


def time_truncated_solve(d: int = 256, k2: int = 128, lam: float = 100.0, iterations: int = 10,
                         repeats: int = 200, k1: int | None = None, seed: int = 0,
                         dim: int = 16) -> Timing:
    """Median time of building and solving one truncated problem.

    Each repeat draws a fresh pair of peaked next-token distributions and a
    sampled token; the embedding table and kernel are built once, as in
    training. The solve runs exactly ``iterations`` sweeps (tolerance is set
    below reach).
    """
    rng = np.random.default_rng(seed)
    emb = EmbeddingTable(rng.normal(size=(d, dim)) / np.sqrt(dim))
    kernel = build_sparse_kernel(build_cost_matrix(emb), lam, d if k1 is None else k1)
    _ = kernel.dense_kernel, kernel.dense_pattern
    cfg = SinkhornConfig(lam=lam, max_iterations=iterations, tol=1e-300)
    times = []
    for _ in range(repeats):
        logits = 3.0 * rng.standard_normal(d)
        p = Distribution(softmax(logits))
        q = Distribution(softmax(logits + rng.standard_normal(d)))
        y = int(rng.choice(d, p=p.probs))
        t0 = time.perf_counter()
        prob = build_truncated_problem(p, q, y, k2, kernel)
        solve_truncated(prob, cfg)
        times.append(time.perf_counter() - t0)
    ms = np.array(times) * 1e3
    return Timing(d=d, k2=k2, lam=lam, iterations=iterations, repeats=repeats,
                  median_ms=float(np.median(ms)), p90_ms=float(np.percentile(ms, 90)),
                  min_ms=float(ms.min()))
