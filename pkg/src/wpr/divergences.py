"""f-divergence generators, per-token penalties and full divergence values.

A divergence between ``pi`` and ``pi_prime`` is ``sum_j pi'_j f(pi_j / pi'_j)``.
The per-token penalty for a sampled token is ``(p_ref / p_theta) f(p_theta / p_ref)``;
its expectation under ``pi_theta`` is exactly that divergence with
``pi = pi_theta`` and ``pi_prime = pi_ref``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wpr.errors import DomainError
from wpr.types import LOG_FLOOR, Distribution

TAGS = ("RKL", "FKL", "JS", "Alpha", "TV", "ChiSq")


@dataclass(frozen=True)
class DivergenceKind:
    tag: str
    alpha: float | None = None

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown divergence {self.tag!r}")
        if self.tag == "Alpha":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        elif self.alpha is not None:
            raise ValueError(f"{self.tag} takes no alpha")

    @property
    def name(self) -> str:
        return f"alpha={self.alpha:g}" if self.tag == "Alpha" else self.tag.lower()

    @classmethod
    def parse(cls, text: str) -> DivergenceKind:
        """Parse ``rkl``, ``fkl``, ``js``, ``tv``, ``chisq`` or ``alpha=0.5``."""
        t = text.strip().lower().replace("χ²", "chisq").replace("chi2", "chisq")
        simple = {"rkl": "RKL", "kl": "RKL", "fkl": "FKL", "js": "JS", "tv": "TV", "chisq": "ChiSq"}
        if t in simple:
            return cls(simple[t])
        for prefix in ("alpha=", "alpha:", "alpha"):
            if t.startswith(prefix):
                try:
                    return cls("Alpha", float(t[len(prefix):]))
                except ValueError:
                    break
        raise ValueError(f"cannot parse divergence {text!r}")


RKL = DivergenceKind("RKL")
FKL = DivergenceKind("FKL")
JS = DivergenceKind("JS")
TV = DivergenceKind("TV")
CHISQ = DivergenceKind("ChiSq")


def all_kinds(alpha: float = 0.5) -> tuple[DivergenceKind, ...]:
    return (RKL, FKL, JS, DivergenceKind("Alpha", alpha), TV, CHISQ)


def _f(kind: DivergenceKind, u: np.ndarray) -> np.ndarray:
    if kind.tag == "RKL":
        return u * np.log(u)
    if kind.tag == "FKL":
        return -np.log(u)
    if kind.tag == "JS":
        return u * np.log(u) - (u + 1.0) * np.log((u + 1.0) / 2.0)
    if kind.tag == "Alpha":
        a = kind.alpha
        return (u ** (1.0 - a) - (1.0 - a) * u - a) / (a * (a - 1.0))
    if kind.tag == "TV":
        return np.abs(u - 1.0) / 2.0
    return (u - 1.0) ** 2


def f_function(kind: DivergenceKind, u):
    """Generator ``f(u)`` of the divergence; scalar in, scalar out.

    Raises
    ------
    DomainError
        If any ``u <= 0``.
    """
    arr = np.asarray(u, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise DomainError("f-divergence generator needs u > 0")
    out = _f(kind, arr)
    return float(out) if out.ndim == 0 else out


def token_penalty(kind: DivergenceKind, p_theta, p_ref):
    """Per-token penalty ``(p_ref / p_theta) f(p_theta / p_ref)``.

    Both probabilities are floored at ``1e-30``. Works elementwise on arrays.
    For RKL this is exactly ``log(p_theta / p_ref)``.
    """
    pt = np.maximum(np.asarray(p_theta, dtype=np.float64), LOG_FLOOR)
    pr = np.maximum(np.asarray(p_ref, dtype=np.float64), LOG_FLOOR)
    if kind.tag == "RKL":
        out = np.log(pt) - np.log(pr)
    else:
        out = (pr / pt) * _f(kind, pt / pr)
    return float(out) if out.ndim == 0 else out


def divergence_value(kind: DivergenceKind, pi, pi_prime) -> float:
    """``sum_j pi'_j f(pi_j / pi'_j)``, skipping atoms where both are zero."""
    p = pi.probs if isinstance(pi, Distribution) else np.asarray(pi, dtype=np.float64)
    q = pi_prime.probs if isinstance(pi_prime, Distribution) else np.asarray(pi_prime, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    live = (p > 0) | (q > 0)
    pf = np.maximum(p[live], LOG_FLOOR)
    qf = np.maximum(q[live], LOG_FLOOR)
    if kind.tag == "RKL":
        terms = pf * (np.log(pf) - np.log(qf))
    else:
        terms = qf * _f(kind, pf / qf)
    return float(np.sum(terms))
