"""Randomized property suite for the transport solver and the penalty identities.

Each check returns a :class:`PropertyResult` with its worst-case residual, so
the same functions back the ``verify`` subcommand and the test-suite.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from wpr.cost_kernel import EmbeddingTable, build_cost_matrix, build_sparse_kernel
from wpr.oracle import dense_entropic_reference, exact_ot, one_d_wasserstein
from wpr.penalty import expected_penalty_decomposition
from wpr.sinkhorn import (
    SinkhornConfig,
    build_truncated_problem,
    coupling_from_duals,
    dual_objective,
    pin_gauge,
    primal_objective,
    sinkhorn_solve,
    solve_truncated,
)
from wpr.types import CostMatrix, Distribution

LOG_DOMAIN_FROM = 500.0


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    worst: float
    threshold: float
    count: int

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<26} {status}  worst={self.worst:.3e}  threshold={self.threshold:.1e}  n={self.count}"


@dataclass(frozen=True)
class Instance:
    mu: Distribution
    nu: Distribution
    cost: CostMatrix


def random_instance(rng: np.random.Generator, d: int, dim: int = 2) -> Instance:
    """Points uniform in the unit square, Euclidean cost, Dirichlet(1) marginals."""
    emb = EmbeddingTable(rng.uniform(size=(d, dim)))
    cost = build_cost_matrix(emb)
    mu = Distribution(rng.dirichlet(np.ones(d)))
    nu = Distribution(rng.dirichlet(np.ones(d)))
    return Instance(mu, nu, cost)


def tight_config(lam: float, tol: float = 1e-10, max_iterations: int = 200_000) -> SinkhornConfig:
    mode = "log_domain" if lam >= LOG_DOMAIN_FROM else "direct_with_floor"
    return SinkhornConfig(lam=lam, max_iterations=max_iterations, tol=tol, stabilization=mode)


def _result(name, residuals, threshold, extra_ok=True) -> PropertyResult:
    r = np.asarray(residuals, dtype=np.float64)
    worst = float(np.max(r)) if r.size else 0.0
    ok = bool(extra_ok and r.size and np.all(r <= threshold))
    return PropertyResult(name, ok, worst, threshold, int(r.size))


def check_duality(instances: Sequence[Instance], lams: Sequence[float], tol: float,
                  threshold: float = 1e-6) -> tuple[PropertyResult, PropertyResult, PropertyResult]:
    """Strong duality, marginal feasibility and entrywise stationarity.

    The duality residual is ``|primal - dual| / (1 + |primal|)``; a solve
    that does not converge counts as a failure.
    """
    gaps, feas, stat = [], [], []
    all_conv = True
    for inst, lam in zip(instances, lams):
        d = inst.mu.d
        kernel = build_sparse_kernel(inst.cost, lam, d)
        sol = sinkhorn_solve(inst.mu, inst.nu, kernel, tight_config(lam, tol))
        all_conv &= sol.converged
        plan = coupling_from_duals(sol, kernel)
        pr = primal_objective(plan, inst.cost, lam)
        du = dual_objective(sol.phi, sol.psi, inst.mu, inst.nu, inst.cost, lam, kernel=kernel)
        gaps.append(abs(pr - du) / (1.0 + abs(pr)))
        feas.append(max(np.abs(plan.row_sums() - inst.mu.probs).max(),
                        np.abs(plan.col_sums() - inst.nu.probs).max()))
        with np.errstate(under="ignore"):
            model = np.exp(lam * (sol.phi[:, None] + sol.psi[None, :] - inst.cost.entries))
        stored = kernel.dense_kernel > 0
        rel = np.abs(plan.plan - model)[stored] / np.maximum(np.abs(model[stored]), 1e-300)
        stat.append(float(rel.max()))
    return (_result("strong_duality", gaps, threshold, all_conv),
            _result("marginal_feasibility", feas, 10 * tol, all_conv),
            _result("stationarity", stat, 1e-8, all_conv))


def lambda_errors(inst: Instance, lams: Sequence[float]) -> np.ndarray:
    """``|entropic(lam) - exact W|`` for each ``lam`` using the oracles."""
    w = exact_ot(inst.mu, inst.nu, inst.cost)[0]
    return np.array([abs(dense_entropic_reference(inst.mu, inst.nu, inst.cost, lam)[0] - w)
                     for lam in lams])


def check_lambda_limit(instances: Sequence[Instance], lams: Sequence[float] = (1, 10, 100, 1000),
                       bound: float = 0.01) -> PropertyResult:
    """Errors must not increase along ``lams`` and stay under ``bound`` at ``lam >= 1000``."""
    lams = sorted(lams)
    worst = []
    monotone = True
    for inst in instances:
        err = lambda_errors(inst, lams)
        monotone &= bool(np.all(np.diff(err) <= 1e-12))
        big = [e for lam, e in zip(lams, err) if lam >= 1000]
        worst.append(max(big) if big else 0.0)
    return _result("lambda_limit", worst, bound, monotone)


def check_truncation_equivalence(instances: Sequence[Instance], lams: Sequence[float], tol: float,
                                 rng: np.random.Generator, threshold: float = 1e-6) -> PropertyResult:
    """With ``k2 = d`` the reduced solve reproduces the dense potentials.

    Both sides are pinned to ``phi[0] = 0`` before comparing the sampled
    token's potential.
    """
    res = []
    for inst, lam in zip(instances, lams):
        d = inst.mu.d
        kernel = build_sparse_kernel(inst.cost, lam, d)
        cfg = tight_config(lam, tol)
        y = int(rng.integers(d))
        dense = sinkhorn_solve(inst.mu, inst.nu, kernel, cfg)
        prob = build_truncated_problem(inst.mu, inst.nu, y, d, kernel)
        red = solve_truncated(prob, cfg)
        pd, _ = pin_gauge(dense.phi, dense.psi, 0)
        m = prob.support.size
        pt, _ = pin_gauge(red.phi[:m], red.psi[:m], 0)
        res.append(abs(pd[y] - pt[prob.sampled_pos]))
    return _result("truncation_equivalence", res, threshold)


def check_expected_penalty(instances: Sequence[Instance], lams: Sequence[float], tol: float,
                           threshold: float = 1e-6) -> PropertyResult:
    """``E_theta[phi] + const`` equals the entropic distance."""
    res = []
    for inst, lam in zip(instances, lams):
        kernel = build_sparse_kernel(inst.cost, lam, inst.mu.d)
        e, c, dist = expected_penalty_decomposition(inst.mu, inst.nu, kernel, tight_config(lam, tol))
        res.append(abs(e + c - dist))
    return _result("expected_penalty_identity", res, threshold)


def check_gauge(instances: Sequence[Instance], lams: Sequence[float], tol: float,
                rng: np.random.Generator, threshold: float = 1e-12) -> PropertyResult:
    """Shifting ``(phi + t, psi - t)`` keeps the dual and moves ``E[phi]`` by ``t``."""
    res = []
    for inst, lam in zip(instances, lams):
        kernel = build_sparse_kernel(inst.cost, lam, inst.mu.d)
        sol = sinkhorn_solve(inst.mu, inst.nu, kernel, tight_config(lam, tol))
        t = float(rng.uniform(-1.0, 1.0))
        base = dual_objective(sol.phi, sol.psi, inst.mu, inst.nu, inst.cost, lam)
        moved = dual_objective(sol.phi + t, sol.psi - t, inst.mu, inst.nu, inst.cost, lam)
        shift = (sol.phi + t) @ inst.mu.probs - sol.phi @ inst.mu.probs
        res.append(max(abs(moved - base) / (1.0 + abs(base)), abs(shift - t)))
    return _result("gauge_invariance", res, threshold)


def check_oracle_agreement(instances: Sequence[Instance], lams: Sequence[float], tol: float,
                           threshold: float = 1e-6) -> PropertyResult:
    """Production dense solve and the independent reference agree on the distance."""
    res = []
    for inst, lam in zip(instances, lams):
        kernel = build_sparse_kernel(inst.cost, lam, inst.mu.d)
        sol = sinkhorn_solve(inst.mu, inst.nu, kernel, tight_config(lam, tol))
        prod = primal_objective(coupling_from_duals(sol, kernel), inst.cost, lam)
        ref = dense_entropic_reference(inst.mu, inst.nu, inst.cost, lam)[0]
        res.append(abs(prod - ref))
    return _result("oracle_agreement", res, threshold)


def check_one_d(rng: np.random.Generator, n: int, d_max: int = 32) -> PropertyResult:
    res = []
    for _ in range(n):
        d = int(rng.integers(2, d_max + 1))
        idx = np.arange(d, dtype=np.float64)
        cost = CostMatrix(np.abs(idx[:, None] - idx[None, :]))
        a = Distribution(rng.dirichlet(np.ones(d)))
        b = Distribution(rng.dirichlet(np.ones(d)))
        res.append(abs(exact_ot(a, b, cost)[0] - one_d_wasserstein(a, b)))
    return _result("one_d_oracle", res, 1e-10)


def check_triangle(rng: np.random.Generator, n: int, d_max: int = 8) -> PropertyResult:
    """``W(a, c) <= W(a, b) + W(b, c)``; the residual is the violation (0 if none)."""
    res = []
    for _ in range(n):
        d = int(rng.integers(2, d_max + 1))
        cost = build_cost_matrix(EmbeddingTable(rng.uniform(size=(d, 2))))
        a, b, c = (Distribution(rng.dirichlet(np.ones(d))) for _ in range(3))
        viol = exact_ot(a, c, cost)[0] - exact_ot(a, b, cost)[0] - exact_ot(b, c, cost)[0]
        res.append(max(viol, 0.0))
    return _result("triangle_inequality", res, 1e-12)


def run_suite(seed: int = 0, n: int = 100, d_max: int = 16, lams: Sequence[float] | None = None,
              tol: float = 1e-10) -> list[PropertyResult]:
    """Run every property on ``n`` random instances with ``d <= d_max``.

    Without ``lams`` the solver checks cycle through ``lambda`` in
    ``{10, 100}`` and the limit check uses ``{1, 10, 100, 1000}`` on
    ``d <= 6``. With explicit ``lams`` both use those values.
    """
    rng = np.random.default_rng(seed)
    solver_lams = list(lams) if lams else [10.0, 100.0]
    limit_lams = list(lams) if lams else [1.0, 10.0, 100.0, 1000.0]
    sizes = [d for d in (4, 8, 16, 32, 64) if d <= d_max] or [max(2, d_max)]
    insts = [random_instance(rng, sizes[i % len(sizes)]) for i in range(n)]
    per = [solver_lams[(i // len(sizes)) % len(solver_lams)] for i in range(n)]
    n_small = max(1, n // 2)
    small = [random_instance(rng, int(rng.integers(2, min(6, d_max) + 1))) for _ in range(n_small)]
    results = list(check_duality(insts, per, tol))
    results.append(check_lambda_limit(small, limit_lams))
    results.append(check_truncation_equivalence(insts, per, tol, rng))
    results.append(check_expected_penalty(insts, per, tol))
    results.append(check_gauge(insts, per, tol, rng))
    results.append(check_oracle_agreement(insts[: max(1, n // 5)], per[: max(1, n // 5)], tol))
    results.append(check_one_d(rng, n))
    results.append(check_triangle(rng, max(1, n // 5)))
    return results
