"""Entropic optimal transport by Sinkhorn-Knopp scaling.

Potentials follow ``P_ij = exp(lam * (phi_i + psi_j - C_ij))``, i.e.
``phi = log(u) / lam``. The row potential ``phi`` is the per-token penalty.

Two iteration schemes are available:

``direct_with_floor``
    Plain multiplicative updates ``u <- mu / (K v)``, ``v <- nu / (K^T u)``
    with denominators floored at ``1e-30``. Zero-mass atoms get a zero
    scaling; their potential is reported as ``log(tiny) / lam``.
``log_domain``
    The same updates carried out on ``log u`` and ``log v`` with
    log-sum-exp reductions, for large ``lam`` where ``K`` underflows.

Both stop once the max-abs change of ``phi`` between successive sweeps drops
below ``tol`` or ``max_iterations`` is reached.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.sparse as sp

from wpr.errors import DisconnectedSupport, NumericalBlowup
from wpr.types import LOG_FLOOR, CostMatrix, Coupling, Distribution, DualSolution, SparseKernel

# log argument floor for zero scalings (zero-mass atoms)
TINY = np.finfo(np.float64).tiny

Stabilization = Literal["direct_with_floor", "log_domain"]


@dataclass(frozen=True)
class SinkhornConfig:
    lam: float = 100.0
    max_iterations: int = 50
    tol: float = 1e-4
    stabilization: Stabilization = "direct_with_floor"

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.stabilization not in ("direct_with_floor", "log_domain"):
            raise ValueError(f"unknown stabilization {self.stabilization!r}")


@dataclass(frozen=True)
class BatchResult:
    """Stacked output of :func:`sinkhorn_batch`; row ``b`` is problem ``b``."""

    u: np.ndarray
    v: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    final_delta: np.ndarray


def _check_support(mu, nu, row_nnz, col_nnz):
    bad_r = np.flatnonzero((mu > 0) & (row_nnz == 0))
    bad_c = np.flatnonzero((nu > 0) & (col_nnz == 0))
    if bad_r.size or bad_c.size:
        raise DisconnectedSupport(
            f"no kernel entries for positive-mass rows {bad_r.tolist()[:8]} "
            f"/ columns {bad_c.tolist()[:8]}"
        )


def _direct(mu, nu, matvec, rmatvec, lam, max_iter, tol, track=False):
    """Batched multiplicative Sinkhorn on ``(B, n)`` marginals.

    Problems that converge are frozen while the rest keep iterating, so every
    row gets exactly the iterates it would get if solved alone.
    """
    B, n = mu.shape
    # marginals are not floored: a phantom 1e-30 mass would outweigh kernel
    # entries below 1e-30 and absorb the transport
    u = np.ones((B, n))
    v = np.ones((B, n))
    phi = np.zeros((B, n))
    iters = np.zeros(B, dtype=np.int64)
    delta = np.full(B, np.inf)
    done = np.zeros(B, dtype=bool)
    history = []
    for it in range(1, max_iter + 1):
        un = mu / np.maximum(matvec(v), LOG_FLOOR)
        vn = nu / np.maximum(rmatvec(un), LOG_FLOOR)
        phin = np.log(np.maximum(un, TINY)) / lam
        dl = np.max(np.abs(phin - phi), axis=1)
        act = ~done
        if not (np.all(np.isfinite(un[act])) and np.all(np.isfinite(vn[act]))):
            raise NumericalBlowup(f"non-finite scaling at iteration {it}")
        u[act], v[act], phi[act] = un[act], vn[act], phin[act]
        delta[act] = dl[act]
        iters[act] = it
        if track:
            history.append(float(dl[0]))
        done |= act & (dl < tol)
        if done.all():
            break
    psi = np.log(np.maximum(v, TINY)) / lam
    return u, v, phi, psi, iters, done, delta, history


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    """Max-shifted log-sum-exp; all ``-inf`` slices give ``-inf``."""
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)


def _log_domain(mu, nu, log_k, lam, max_iter, tol, track=False):
    """Single-problem log-domain Sinkhorn on a dense log-kernel.

    Zero-mass atoms carry a log-scaling of ``-inf`` and drop out of every
    reduction; they are reported at ``log(tiny)`` to match the direct scheme.
    """
    live_r = mu > 0
    live_c = nu > 0
    with np.errstate(divide="ignore"):
        log_mu = np.where(live_r, np.log(mu), -np.inf)
        log_nu = np.where(live_c, np.log(nu), -np.inf)
    f = np.where(live_r, 0.0, -np.inf)
    g = np.where(live_c, 0.0, -np.inf)
    history = []
    delta = np.inf
    converged = False
    it = 0
    with np.errstate(invalid="ignore"):
        for it in range(1, max_iter + 1):
            f_new = np.where(live_r, log_mu - _lse(log_k + g[None, :], 1), -np.inf)
            g = np.where(live_c, log_nu - _lse(log_k + f_new[:, None], 0), -np.inf)
            if not (np.all(np.isfinite(f_new[live_r])) and np.all(np.isfinite(g[live_c]))):
                raise NumericalBlowup(f"non-finite log-scaling at iteration {it}")
            delta = float(np.max(np.abs(f_new[live_r] - f[live_r]), initial=0.0)) / lam
            f = f_new
            if track:
                history.append(delta)
            if delta < tol:
                converged = True
                break
    floor = np.log(TINY)
    return np.where(live_r, f, floor), np.where(live_c, g, floor), it, converged, delta, history


def _as_operator(kernel):
    if isinstance(kernel, SparseKernel):
        return kernel.kernel
    return kernel


def _nnz(k):
    if sp.issparse(k):
        return np.asarray(k.getnnz(axis=1)), np.asarray(k.getnnz(axis=0))
    nz = k > 0
    return nz.sum(axis=1), nz.sum(axis=0)


def solve_arrays(mu, nu, kernel, cfg: SinkhornConfig, log_kernel=None, track=False) -> DualSolution:
    """Solve one problem given raw marginal arrays.

    ``kernel`` is a dense array, a scipy sparse matrix or a
    :class:`SparseKernel`. For ``log_domain`` a dense ``log_kernel`` may be
    supplied; otherwise it is derived from ``kernel``.
    """
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    lam = cfg.lam
    if cfg.stabilization == "log_domain":
        if log_kernel is None:
            if isinstance(kernel, SparseKernel):
                log_kernel = kernel.log_kernel()
            else:
                k = kernel.toarray() if sp.issparse(kernel) else np.asarray(kernel)
                with np.errstate(divide="ignore"):
                    log_kernel = np.log(k)
        fin = np.isfinite(log_kernel)
        _check_support(mu, nu, fin.sum(axis=1), fin.sum(axis=0))
        f, g, it, conv, delta, hist = _log_domain(mu, nu, log_kernel, lam,
                                                  cfg.max_iterations, cfg.tol, track)
        with np.errstate(over="ignore", under="ignore"):
            u = np.where(mu > 0, np.exp(f), 0.0)
            v = np.where(nu > 0, np.exp(g), 0.0)
        return DualSolution(u=u, v=v, phi=f / lam, psi=g / lam, lam=lam, iterations=it,
                            converged=conv, final_delta=delta, history=tuple(hist))

    k = _as_operator(kernel)
    _check_support(mu, nu, *_nnz(k))
    kt = k.T
    out = _direct(mu[None, :], nu[None, :],
                  lambda x: (k @ x.T).T, lambda x: (kt @ x.T).T,
                  lam, cfg.max_iterations, cfg.tol, track)
    u, v, phi, psi, iters, done, delta, hist = out
    return DualSolution(u=u[0], v=v[0], phi=phi[0], psi=psi[0], lam=lam,
                        iterations=int(iters[0]), converged=bool(done[0]),
                        final_delta=float(delta[0]), history=tuple(hist))


def sinkhorn_solve(mu: Distribution, nu: Distribution, kernel: SparseKernel,
                   cfg: SinkhornConfig, track: bool = False) -> DualSolution:
    """Scale ``kernel`` so its row sums match ``mu`` and column sums match ``nu``.

    Starts from ``u = v = 1`` and alternates the ``u`` (row, ``mu``) update and
    the ``v`` (column, ``nu``) update. A non-converged result is returned with
    ``converged=False`` rather than raised.

    Raises
    ------
    DisconnectedSupport
        A positive-mass row or column has no kernel entry.
    NumericalBlowup
        A scaling became non-finite.
    """
    if not (mu.d == nu.d == kernel.d):
        raise ValueError(f"dimension mismatch: {mu.d}, {nu.d}, {kernel.d}")
    return solve_arrays(mu.probs, nu.probs, kernel, cfg, track=track)


def sinkhorn_batch(mu: np.ndarray, nu: np.ndarray, kernels: np.ndarray,
                   cfg: SinkhornConfig) -> BatchResult:
    """Direct-mode Sinkhorn over a stack of independent dense problems.

    ``mu`` and ``nu`` are ``(B, n)``; ``kernels`` is ``(B, n, n)``. Padding
    atoms should carry zero mass and an all-zero kernel row and column.
    """
    mu = np.asarray(mu, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    kt = np.swapaxes(kernels, 1, 2)
    for b in range(mu.shape[0]):
        nz = kernels[b] > 0
        _check_support(mu[b], nu[b], nz.sum(axis=1), nz.sum(axis=0))
    u, v, phi, psi, iters, done, delta, _ = _direct(
        mu, nu,
        lambda x: np.matmul(kernels, x[:, :, None])[:, :, 0],
        lambda x: np.matmul(kt, x[:, :, None])[:, :, 0],
        cfg.lam, cfg.max_iterations, cfg.tol,
    )
    return BatchResult(u=u, v=v, phi=phi, psi=psi, iterations=iters,
                       converged=done, final_delta=delta)


def coupling_from_duals(sol: DualSolution, kernel) -> Coupling:
    """``P = diag(u) K diag(v)``; pruned kernel entries stay exactly zero.

    Falls back to ``exp(lam (phi + psi) + log K)`` when a scaling is not a
    usable positive float, when underflow dropped pattern entries from the
    stored kernel (large ``lam``), or entrywise where the product underflowed.
    """
    if isinstance(kernel, SparseKernel):
        if sol.u.size and kernel.kernel.nnz == kernel.pattern.nnz \
                and np.all(np.isfinite(sol.u)) and np.all(np.isfinite(sol.v)) \
                and np.all(sol.u > 0) and np.all(sol.v > 0):
            p = kernel.kernel.multiply(sol.u[:, None]).multiply(sol.v[None, :]).toarray()
            # the three-way product can underflow where the log form does not
            lost = (p == 0) & (kernel.dense_kernel > 0)
            if lost.any():
                p[lost] = _coupling_from_log(sol, kernel.log_kernel())[lost]
        else:
            p = _coupling_from_log(sol, kernel.log_kernel())
    else:
        k = kernel.toarray() if sp.issparse(kernel) else np.asarray(kernel)
        if np.all(np.isfinite(sol.u)) and np.all(np.isfinite(sol.v)):
            p = sol.u[:, None] * k * sol.v[None, :]
        else:
            with np.errstate(divide="ignore"):
                p = _coupling_from_log(sol, np.log(k))
    return Coupling(p)


def _coupling_from_log(sol: DualSolution, log_k):
    with np.errstate(under="ignore"):
        return np.exp(sol.lam * (sol.phi[:, None] + sol.psi[None, :]) + log_k)


def _cost_array(cost) -> np.ndarray:
    return cost.entries if isinstance(cost, CostMatrix) else np.asarray(cost, dtype=np.float64)


def entropy(plan) -> float:
    """``H(P) = -sum P (log P - 1)`` with ``0 log 0 = 0``."""
    p = plan.plan if isinstance(plan, Coupling) else np.asarray(plan)
    pos = p > 0
    return float(-np.sum(p[pos] * (np.log(p[pos]) - 1.0)))


def primal_objective(plan, cost, lam: float) -> float:
    """Entropy-regularized transport cost ``<P, C> - H(P) / lam``."""
    p = plan.plan if isinstance(plan, Coupling) else np.asarray(plan)
    c = _cost_array(cost)
    pos = p > 0
    return float(np.sum(p[pos] * c[pos]) - entropy(p) / lam)


def transport_cost(plan, cost) -> float:
    p = plan.plan if isinstance(plan, Coupling) else np.asarray(plan)
    pos = p > 0
    return float(np.sum(p[pos] * _cost_array(cost)[pos]))


def dual_objective(phi, psi, mu, nu, cost, lam: float, kernel: SparseKernel | None = None) -> float:
    """``<phi, mu> + <psi, nu> - (1/lam) sum exp(lam (phi_i + psi_j - C_ij))``.

    With a ``kernel`` the exponential sum runs over its retained pattern only.
    Infinite costs contribute nothing.
    """
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    mu = mu.probs if isinstance(mu, Distribution) else np.asarray(mu, dtype=np.float64)
    nu = nu.probs if isinstance(nu, Distribution) else np.asarray(nu, dtype=np.float64)
    c = _cost_array(cost)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        expo = np.exp(lam * (phi[:, None] + psi[None, :] - c))
    expo = np.where(np.isfinite(c), expo, 0.0)
    if kernel is not None:
        expo = np.where(kernel.dense_pattern, expo, 0.0)
    return float(phi @ mu + psi @ nu - expo.sum() / lam)


def duality_gap(sol: DualSolution, mu, nu, kernel, cost) -> float:
    p = coupling_from_duals(sol, kernel)
    sk = kernel if isinstance(kernel, SparseKernel) else None
    return abs(primal_objective(p, cost, sol.lam)
               - dual_objective(sol.phi, sol.psi, mu, nu, cost, sol.lam, kernel=sk))


def pin_gauge(phi, psi, index: int):
    """Shift ``(phi, psi) -> (phi - t, psi + t)`` so that ``phi[index] == 0``."""
    t = phi[index]
    return phi - t, psi + t


# --- top-k2 truncation with a dummy atom -------------------------------------

@dataclass(frozen=True)
class TruncatedProblem:
    """Reduced transport problem over ``support`` plus a trailing dummy atom.

    ``support`` is the sorted union of both retained supports; ``mu`` and
    ``nu`` are zero on atoms the respective side did not retain. When any
    mass was truncated (``has_dummy``), the last entry of every reduced vector
    and the last row/column of ``reduced_kernel`` belong to the dummy atom;
    otherwise the reduced problem is exactly the restriction to ``support``.
    """

    support_theta: np.ndarray
    support_ref: np.ndarray
    support: np.ndarray
    dummy_mass_theta: float
    dummy_mass_ref: float
    has_dummy: bool
    sampled_index: int
    sampled_pos: int
    mu: np.ndarray
    nu: np.ndarray
    reduced_kernel: np.ndarray
    reduced_cost: np.ndarray
    lam: float

    @property
    def size(self) -> int:
        return self.mu.size


def top_k(p: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest entries; ties go to the lower index."""
    k = min(k, p.size)
    return np.argsort(-p, kind="stable")[:k]


def build_truncated_problem(pi_theta: Distribution, pi_ref: Distribution, sampled: int,
                            k2: int, kernel: SparseKernel,
                            dummy_cost: float | None = None) -> TruncatedProblem:
    """Restrict both policies to their top-``k2`` atoms plus ``sampled``.

    Mass outside each side's retained set goes to a shared dummy atom, which
    is only appended when that mass is nonzero on at least one side.
    Dummy-to-dummy cost is 0; dummy-to-token cost defaults to the largest
    retained cost inside the reduced support.
    """
    d = kernel.d
    if not 0 <= sampled < d:
        raise IndexError(f"sampled token {sampled} outside vocabulary of {d}")
    if k2 < 1:
        raise ValueError("k2 must be >= 1")
    p, q = pi_theta.probs, pi_ref.probs
    keep_t = np.zeros(d, dtype=bool)
    keep_t[top_k(p, k2)] = True
    keep_t[sampled] = True
    keep_r = np.zeros(d, dtype=bool)
    keep_r[top_k(q, k2)] = True
    keep_r[sampled] = True
    support = np.flatnonzero(keep_t | keep_r)
    m = support.size

    dm_t = float(p[~keep_t].sum())
    dm_r = float(q[~keep_r].sum())
    # with nothing truncated the dummy would only add a free gauge direction
    has_dummy = dm_t > 0 or dm_r > 0
    n = m + 1 if has_dummy else m

    mu = np.zeros(n)
    nu = np.zeros(n)
    mu[:m] = np.where(keep_t[support], p[support], 0.0)
    nu[:m] = np.where(keep_r[support], q[support], 0.0)

    kd = kernel.dense_kernel
    pat = kernel.dense_pattern[np.ix_(support, support)]
    red_k = np.zeros((n, n))
    red_k[:m, :m] = kd[np.ix_(support, support)]
    red_c = np.full((n, n), np.inf)
    sub_c = kernel.cost.entries[np.ix_(support, support)]
    red_c[:m, :m] = np.where(pat, sub_c, np.inf)
    if has_dummy:
        mu[m], nu[m] = dm_t, dm_r
        if dummy_cost is None:
            dummy_cost = float(sub_c[pat].max()) if pat.any() else 0.0
        red_c[m, :m] = red_c[:m, m] = dummy_cost
        red_c[m, m] = 0.0
        red_k[m, :m] = red_k[:m, m] = np.exp(-kernel.lam * dummy_cost)
        red_k[m, m] = 1.0
    pos = int(np.searchsorted(support, sampled))
    return TruncatedProblem(
        support_theta=np.flatnonzero(keep_t), support_ref=np.flatnonzero(keep_r),
        support=support, dummy_mass_theta=dm_t, dummy_mass_ref=dm_r, has_dummy=has_dummy,
        sampled_index=int(sampled), sampled_pos=pos, mu=mu, nu=nu,
        reduced_kernel=red_k, reduced_cost=red_c, lam=kernel.lam,
    )


def solve_truncated(problem: TruncatedProblem, cfg: SinkhornConfig, track: bool = False) -> DualSolution:
    """Sinkhorn on the reduced dense problem; ``phi[problem.sampled_pos]`` is the penalty."""
    log_k = None
    if cfg.stabilization == "log_domain":
        with np.errstate(divide="ignore"):
            log_k = np.where(np.isfinite(problem.reduced_cost),
                             -problem.lam * problem.reduced_cost, -np.inf)
    return solve_arrays(problem.mu, problem.nu, problem.reduced_kernel, cfg,
                        log_kernel=log_k, track=track)


def truncated_plan(problem: TruncatedProblem, sol: DualSolution) -> Coupling:
    """Coupling of a reduced problem.

    Uses the scaled kernel when every finite-cost entry survived in the
    stored kernel, otherwise ``exp(lam (phi + psi - C))`` on finite costs.
    """
    c = problem.reduced_cost
    finite = np.isfinite(c)
    k = np.asarray(problem.reduced_kernel)
    if np.all((k > 0) == finite) and np.all(np.isfinite(sol.u)) and np.all(np.isfinite(sol.v)):
        return Coupling(sol.u[:, None] * k * sol.v[None, :])
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        p = np.exp(sol.lam * (sol.phi[:, None] + sol.psi[None, :] - np.where(finite, c, 0.0)))
    return Coupling(np.where(finite, p, 0.0))


def truncated_gap(problem: TruncatedProblem, sol: DualSolution) -> tuple[float, float, float]:
    """Return ``(primal, dual, |primal - dual|)`` on a reduced problem."""
    plan = truncated_plan(problem, sol)
    pr = primal_objective(plan, problem.reduced_cost, sol.lam)
    du = dual_objective(sol.phi, sol.psi, problem.mu, problem.nu, problem.reduced_cost, sol.lam)
    return pr, du, abs(pr - du)
