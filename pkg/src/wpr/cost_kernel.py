"""Semantic cost matrices from token embeddings and their truncated kernels."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from wpr.errors import ConfigError, ZeroVectorCosine
from wpr.types import CostMatrix, SparseKernel

log = logging.getLogger(__name__)

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class EmbeddingTable:
    vectors: np.ndarray
    token_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < 1:
            raise ValueError(f"need a d x m table with d >= 2, m >= 1, got {v.shape}")
        if self.token_labels is not None and len(self.token_labels) != v.shape[0]:
            raise ValueError("one label per embedding row is required")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def d(self) -> int:
        return self.vectors.shape[0]


def build_cost_matrix(emb: EmbeddingTable, metric: str = "euclidean") -> CostMatrix:
    """Pairwise token cost: L2 distance or one minus cosine similarity."""
    x = emb.vectors
    if metric == "euclidean":
        c = cdist(x, x, metric="euclidean")
    elif metric == "cosine":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0):
            raise ZeroVectorCosine(f"zero embedding rows: {np.flatnonzero(norms == 0).tolist()}")
        xn = x / norms[:, None]
        c = np.clip(1.0 - xn @ xn.T, 0.0, None)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 0.0)
    return CostMatrix(c, metric)


def build_sparse_kernel(cost: CostMatrix, lam: float, k1: int) -> SparseKernel:
    """Nearest-``k1`` truncated kernel with a mirrored (symmetric) pattern.

    Each row keeps its ``k1`` cheapest columns (diagonal included, ties go to
    the lower column index); the pattern is then OR-ed with its transpose.
    Entries whose ``exp(-lam * C)`` underflows below ``1e-300`` are dropped
    from ``kernel`` but stay in ``pattern``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    d = cost.d
    notes = []
    if k1 > d:
        notes.append(f"k1={k1} clamped to d={d}")
        log.warning(notes[-1])
        k1 = d
    if k1 < 1:
        raise ValueError("k1 must be >= 1")
    c = cost.entries

    # stable sort on (cost, index) with the diagonal forced first
    keyed = c.copy()
    np.fill_diagonal(keyed, -1.0)
    order = np.argsort(keyed, axis=1, kind="stable")[:, :k1]
    rows = np.repeat(np.arange(d), k1)
    mask = np.zeros((d, d), dtype=bool)
    mask[rows, order.ravel()] = True
    mask |= mask.T

    vals = np.where(mask, np.exp(-lam * c), 0.0)
    vals[vals < UNDERFLOW] = 0.0
    kernel = sp.csr_matrix(vals)
    kernel.eliminate_zeros()
    pattern = sp.csr_matrix(mask)
    return SparseKernel(kernel=kernel, lam=float(lam), k1=int(k1), pattern=pattern,
                        cost=cost, warnings=tuple(notes))


def read_embeddings(path: str | Path) -> EmbeddingTable:
    """Parse the text format ``d m`` header, then ``d`` rows of ``m`` floats.

    A row may carry a label after a tab. Parsing never consults the locale.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ConfigError("empty embedding file", line=1)
    head = lines[0].split()
    if len(head) != 2:
        raise ConfigError("header must be 'd m'", line=1)
    try:
        d, m = int(head[0]), int(head[1])
    except ValueError as exc:
        raise ConfigError(f"bad header: {exc}", line=1) from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != d:
        raise ConfigError(f"expected {d} rows, found {len(body)}", line=len(lines))
    vecs = np.empty((d, m))
    labels: list[str] = []
    for i, ln in enumerate(body):
        nums, _, label = ln.partition("\t")
        parts = nums.split()
        if len(parts) != m:
            raise ConfigError(f"expected {m} values, found {len(parts)}", line=i + 2)
        try:
            vecs[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(str(exc), line=i + 2) from None
        labels.append(label.strip())
    has_labels = any(labels)
    return EmbeddingTable(vecs, tuple(labels) if has_labels else None)


def write_embeddings(path: str | Path, emb: EmbeddingTable) -> None:
    d, m = emb.vectors.shape
    out = [f"{d} {m}"]
    for i, row in enumerate(emb.vectors):
        line = " ".join(repr(float(x)) for x in row)
        if emb.token_labels is not None:
            line += "\t" + emb.token_labels[i]
        out.append(line)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
