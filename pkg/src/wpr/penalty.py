"""Wasserstein reward penalty from the row potential of a truncated Sinkhorn solve.

For a sampled token ``y`` the penalty is ``phi[y]`` of the entropic transport
problem from ``pi_theta`` to ``pi_ref``; the shaped reward is
``R - beta * phi[y]``. Averaged under ``pi_theta`` the potentials recover the
entropic distance up to a constant that does not depend on ``pi_theta``:

    sum_i pi_theta[i] phi[i] + const = W_lambda(pi_theta, pi_ref),
    const = sum_j pi_ref[j] psi[j] - (1/lam) sum_ij exp(lam (phi_i + psi_j - C_ij)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from wpr.sinkhorn import (
    SinkhornConfig,
    build_truncated_problem,
    primal_objective,
    sinkhorn_batch,
    solve_truncated,
    truncated_gap,
    truncated_plan,
)
from wpr.trajectory import Trajectory
from wpr.types import Distribution, SparseKernel


@dataclass(frozen=True)
class PenaltyConfig:
    beta: float
    k2: int
    kernel: SparseKernel
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    dummy_cost: float | None = None

    def __post_init__(self):
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")
        if self.k2 < 1:
            raise ValueError("k2 must be >= 1")
        if self.sinkhorn.lam != self.kernel.lam:
            raise ValueError(f"sinkhorn lambda {self.sinkhorn.lam} differs from "
                             f"kernel lambda {self.kernel.lam}")


@dataclass(frozen=True)
class PenaltyRecord:
    token_index: int
    sampled_token: int
    phi_value: float
    raw_reward: float
    penalized_reward: float
    duality_gap: float
    iterations: int
    converged: bool


def wpr_token_penalty(pi_theta: Distribution, pi_ref: Distribution, sampled: int,
                      cfg: PenaltyConfig, raw_reward: float = 0.0,
                      token_index: int = 0) -> PenaltyRecord:
    """Penalty for one sampled token from the truncated problem.

    ``phi_value`` is the raw potential from the ``u = v = 1`` start, with no
    gauge shift. A solve that hits ``max_iterations`` yields
    ``converged=False`` rather than an exception.
    """
    problem = build_truncated_problem(pi_theta, pi_ref, sampled, cfg.k2, cfg.kernel,
                                      dummy_cost=cfg.dummy_cost)
    sol = solve_truncated(problem, cfg.sinkhorn)
    phi = float(sol.phi[problem.sampled_pos])
    _, _, gap = truncated_gap(problem, sol)
    return PenaltyRecord(
        token_index=int(token_index), sampled_token=int(sampled), phi_value=phi,
        raw_reward=float(raw_reward), penalized_reward=float(raw_reward) - cfg.beta * phi,
        duality_gap=float(gap), iterations=sol.iterations, converged=sol.converged,
    )


# --- batched path used by the trainer ----------------------------------------

@dataclass(frozen=True)
class PenaltyBatch:
    """Per-token outputs of :func:`penalty_batch`, one entry per problem."""

    phi: np.ndarray
    distance: np.ndarray
    duality_gap: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def build_truncated_batch(pi_theta: np.ndarray, pi_ref: np.ndarray, sampled: np.ndarray,
                          k2: int, kernel: SparseKernel, dummy_cost: float | None = None):
    """Vectorized :func:`build_truncated_problem` over ``B`` problems.

    Returns padded ``(mu, nu, K, C, pos, valid)``. Row ``b`` lays out its real
    atoms first (ascending token id), then the dummy atom when any mass was
    truncated, then padding with zero mass, zero kernel and infinite cost.
    ``valid`` marks real and dummy atoms.
    """
    pt = np.asarray(pi_theta, dtype=np.float64)
    pr = np.asarray(pi_ref, dtype=np.float64)
    sampled = np.asarray(sampled, dtype=np.int64)
    B, d = pt.shape
    rows = np.arange(B)
    k = min(k2, d)

    keep_t = np.zeros((B, d), dtype=bool)
    keep_t[rows[:, None], np.argsort(-pt, axis=1, kind="stable")[:, :k]] = True
    keep_t[rows, sampled] = True
    keep_r = np.zeros((B, d), dtype=bool)
    keep_r[rows[:, None], np.argsort(-pr, axis=1, kind="stable")[:, :k]] = True
    keep_r[rows, sampled] = True
    keep = keep_t | keep_r
    m = keep.sum(axis=1)
    n = int(m.max()) + 1

    # kept token ids first, in ascending order, then the rest
    order = np.argsort(~keep, axis=1, kind="stable")[:, : n - 1]
    slot = np.arange(n - 1)[None, :]
    real = slot < m[:, None]
    sup = np.where(real, order, 0)

    mu = np.zeros((B, n))
    nu = np.zeros((B, n))
    mu[:, : n - 1] = np.where(real & np.take_along_axis(keep_t, sup, 1),
                              np.take_along_axis(pt, sup, 1), 0.0)
    nu[:, : n - 1] = np.where(real & np.take_along_axis(keep_r, sup, 1),
                              np.take_along_axis(pr, sup, 1), 0.0)
    mu[rows, m] = np.where(keep_t, 0.0, pt).sum(axis=1)
    nu[rows, m] = np.where(keep_r, 0.0, pr).sum(axis=1)

    pair = real[:, :, None] & real[:, None, :]
    pat = kernel.dense_pattern[sup[:, :, None], sup[:, None, :]] & pair
    sub_c = kernel.cost.entries[sup[:, :, None], sup[:, None, :]]
    K = np.zeros((B, n, n))
    K[:, : n - 1, : n - 1] = np.where(pair, kernel.dense_kernel[sup[:, :, None], sup[:, None, :]], 0.0)
    C = np.full((B, n, n), np.inf)
    C[:, : n - 1, : n - 1] = np.where(pat, sub_c, np.inf)
    if dummy_cost is None:
        dc = np.where(pat, sub_c, -np.inf).reshape(B, -1).max(axis=1)
        dc = np.where(np.isfinite(dc), dc, 0.0)
    else:
        dc = np.full(B, float(dummy_cost))
    kd = np.exp(-kernel.lam * dc)
    has_dummy = (mu[rows, m] > 0) | (nu[rows, m] > 0)
    valid = np.arange(n)[None, :] < (m + has_dummy)[:, None]
    for b in np.flatnonzero(has_dummy):
        mb = m[b]
        C[b, mb, :mb] = C[b, :mb, mb] = dc[b]
        C[b, mb, mb] = 0.0
        K[b, mb, :mb] = K[b, :mb, mb] = kd[b]
        K[b, mb, mb] = 1.0
    pos = (keep & (np.arange(d)[None, :] < sampled[:, None])).sum(axis=1)
    return mu, nu, K, C, pos, valid


def penalty_batch(pi_theta: np.ndarray, pi_ref: np.ndarray, sampled: np.ndarray,
                  cfg: PenaltyConfig) -> PenaltyBatch:
    """Truncated penalties for ``B`` (policy row, reference row, token) triples.

    Uses the direct iteration regardless of ``cfg.sinkhorn.stabilization``.
    ``distance`` is the dual objective of each reduced problem, an estimate of
    the entropic distance between the two rows.
    """
    lam = cfg.sinkhorn.lam
    mu, nu, K, C, pos, valid = build_truncated_batch(pi_theta, pi_ref, sampled, cfg.k2,
                                                     cfg.kernel, cfg.dummy_cost)
    res = sinkhorn_batch(mu, nu, K, cfg.sinkhorn)
    P = res.u[:, :, None] * K * res.v[:, None, :]
    pos_p = P > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = np.where(pos_p, np.log(np.where(pos_p, P, 1.0)), 0.0)
        cost_term = np.where(pos_p, P * np.where(np.isfinite(C), C, 0.0), 0.0).sum(axis=(1, 2))
    ent = -np.sum(np.where(pos_p, P * (logp - 1.0), 0.0), axis=(1, 2))
    primal = cost_term - ent / lam
    phi = np.where(valid, res.phi, 0.0)
    psi = np.where(valid, res.psi, 0.0)
    dual = (phi * mu).sum(axis=1) + (psi * nu).sum(axis=1) - P.sum(axis=(1, 2)) / lam
    rows = np.arange(mu.shape[0])
    return PenaltyBatch(phi=res.phi[rows, pos], distance=dual, duality_gap=np.abs(primal - dual),
                        iterations=res.iterations, converged=res.converged)


def apply_penalties(trajectory: Trajectory, cfg: PenaltyConfig) -> Trajectory:
    """Return a copy whose ``penalized_reward`` is ``reward - beta * phi`` per step.

    ``reward`` already follows the terminal convention (sequence reward on
    the last step only), so the last step carries both terms.
    """
    n = len(trajectory)
    if n == 0:
        return trajectory.with_updates()
    batch = penalty_batch(trajectory.pi_theta, trajectory.pi_ref, trajectory.response, cfg)
    shaped = trajectory.reward - cfg.beta * batch.phi
    return trajectory.with_updates(penalized_reward=shaped, penalty=batch.phi.copy())


def expected_penalty_decomposition(pi_theta: Distribution, pi_ref: Distribution,
                                   kernel: SparseKernel, cfg: SinkhornConfig,
                                   sampled: int = 0):
    """Split the entropic distance into expected penalty plus a constant.

    Solves the untruncated problem (``k2 = d``) and returns
    ``(expected_penalty, constant, distance)`` where ``distance`` is the
    primal objective of the recovered plan. The dummy atom carries no mass and
    is excluded from both sums.
    """
    problem = build_truncated_problem(pi_theta, pi_ref, sampled, kernel.d, kernel)
    sol = solve_truncated(problem, cfg)
    m = problem.support.size
    phi = sol.phi[:m]
    psi = sol.psi[:m]
    p = pi_theta.probs[problem.support]
    q = pi_ref.probs[problem.support]
    c = problem.reduced_cost[:m, :m]
    expected = float(phi @ p)
    # the dual objective minus its policy-dependent term
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        expo = np.exp(sol.lam * (phi[:, None] + psi[None, :] - c))
    expo = np.where(np.isfinite(c), expo, 0.0)
    constant = float(psi @ q - expo.sum() / sol.lam)
    plan = truncated_plan(problem, sol).plan[:m, :m]
    distance = primal_objective(plan, c, sol.lam)
    return expected, constant, distance

