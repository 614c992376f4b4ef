"""Exact reference solvers used for verification only.

None of this is on the training path. ``exact_ot`` is a transportation
simplex (northwest-corner start, MODI potentials, Bland's rule);
``dense_entropic_reference`` is a self-contained log-domain Sinkhorn that
shares no code with :mod:`wpr.sinkhorn`.
"""

from __future__ import annotations

from collections import deque

import numpy as np
from scipy.special import logsumexp

from wpr.errors import NonConvergence
from wpr.types import CostMatrix, Coupling, Distribution

MAX_ORACLE_D = 64
MAX_REFERENCE_D = 512


def _arr(x) -> np.ndarray:
    if isinstance(x, Distribution):
        return x.probs
    if isinstance(x, CostMatrix):
        return x.entries
    return np.asarray(x, dtype=np.float64)


def _northwest_corner(a, b):
    a, b = a.copy(), b.copy()
    m, n = a.size, b.size
    flow = np.zeros((m, n))
    basis = []
    i = j = 0
    while True:
        x = min(a[i], b[j])
        flow[i, j] = x
        basis.append((i, j))
        a[i] -= x
        b[j] -= x
        if i == m - 1 and j == n - 1:
            break
        # advance exactly one index per step so the basis has m + n - 1 cells
        if (a[i] <= b[j] and i < m - 1) or j == n - 1:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost, basis, m, n):
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in basis:
        rows[i].append(j)
        cols[j].append(i)
    u = np.full(m, np.nan)
    v = np.full(n, np.nan)
    u[0] = 0.0
    queue = deque([("r", 0)])
    while queue:
        kind, k = queue.popleft()
        if kind == "r":
            for j in rows[k]:
                if np.isnan(v[j]):
                    v[j] = cost[k, j] - u[k]
                    queue.append(("c", j))
        else:
            for i in cols[k]:
                if np.isnan(u[i]):
                    u[i] = cost[i, k] - v[k]
                    queue.append(("r", i))
    return u, v


def _tree_path(basis, m, i0, j0):
    """Basic cells on the tree path from row node ``i0`` to column node ``j0``."""
    adj: dict[tuple[str, int], list[tuple[tuple[str, int], tuple[int, int]]]] = {}
    for i, j in basis:
        adj.setdefault(("r", i), []).append((("c", j), (i, j)))
        adj.setdefault(("c", j), []).append((("r", i), (i, j)))
    start, goal = ("r", i0), ("c", j0)
    prev: dict[tuple[str, int], tuple[tuple[str, int], tuple[int, int]] | None] = {start: None}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        if node == goal:
            break
        for nxt, cell in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = (node, cell)
                queue.append(nxt)
    path = []
    node = goal
    while prev[node] is not None:
        node, cell = prev[node]
        path.append(cell)
    return path  # ordered from the column end back to the row end


def exact_ot(mu, nu, cost, max_pivots: int = 100_000) -> tuple[float, Coupling]:
    """Exact optimal transport cost and an optimal vertex coupling.

    Transportation simplex with Bland's rule on both the entering and the
    leaving cell, so degenerate pivots cannot cycle.
    """
    a, b, c = _arr(mu), _arr(nu), _arr(cost)
    m, n = a.size, b.size
    if max(m, n) > MAX_ORACLE_D:
        raise ValueError(f"oracle limited to d <= {MAX_ORACLE_D}")
    # absorb round-off so supplies and demands balance exactly
    b = b * (a.sum() / b.sum())
    flow, basis = _northwest_corner(a, b)
    scale = max(1.0, float(np.abs(c).max()))
    for _ in range(max_pivots):
        u, v = _potentials(c, basis, m, n)
        reduced = c - u[:, None] - v[None, :]
        in_basis = np.zeros((m, n), dtype=bool)
        for i, j in basis:
            in_basis[i, j] = True
        cand = np.flatnonzero(((reduced < -1e-12 * scale) & ~in_basis).ravel())
        if cand.size == 0:
            break
        ei, ej = divmod(int(cand[0]), n)
        path = _tree_path(basis, m, ei, ej)
        minus = path[0::2]
        plus = path[1::2]
        theta = min(flow[cell] for cell in minus)
        leaving = min((cell for cell in minus if flow[cell] == theta),
                      key=lambda cell: cell[0] * n + cell[1])
        for cell in minus:
            flow[cell] -= theta
        for cell in plus:
            flow[cell] += theta
        flow[ei, ej] += theta
        flow[leaving] = 0.0
        basis.remove(leaving)
        basis.append((ei, ej))
    else:
        raise NonConvergence("transportation simplex exceeded pivot budget")
    flow = np.clip(flow, 0.0, None)
    return float(np.sum(flow * c)), Coupling(flow)


def one_d_wasserstein(mu, nu) -> float:
    """Closed-form W1 on the integer line with cost ``|i - j|``."""
    a, b = _arr(mu), _arr(nu)
    return float(np.sum(np.abs(np.cumsum(a) - np.cumsum(b))[:-1]))


def _newton_polish(f, g, log_a, log_b, m, lam, tol, max_steps=500):
    """Damped Newton ascent on the dual in log-scaling coordinates.

    The last column scaling is pinned to remove the additive gauge.
    """
    a, b = np.exp(log_a), np.exp(log_b)
    nr, nc = a.size, b.size

    def objective(f, g):
        with np.errstate(over="ignore"):
            return (f @ a + g @ b - np.exp(logsumexp(f[:, None] + m + g[None, :]))) / lam

    for _ in range(max_steps):
        p = np.exp(f[:, None] + m + g[None, :])
        r, c = p.sum(axis=1), p.sum(axis=0)
        err = max(np.max(np.abs(r - a)), np.max(np.abs(c - b)))
        if err < tol:
            return f, g, err
        grad = np.concatenate([a - r, (b - c)[:-1]])
        h = np.zeros((nr + nc - 1, nr + nc - 1))
        h[:nr, :nr] = np.diag(r)
        h[nr:, nr:] = np.diag(c[:-1])
        h[:nr, nr:] = p[:, :-1]
        h[nr:, :nr] = p[:, :-1].T
        try:
            step = np.linalg.solve(h, grad)
        except np.linalg.LinAlgError:
            return f, g, err
        base = objective(f, g)
        t = 1.0
        while t > 1e-10:
            fn = f + t * step[:nr]
            gn = g.copy()
            gn[:-1] += t * step[nr:]
            trial = objective(fn, gn)
            if np.isfinite(trial) and trial >= base - 1e-15 * abs(base):
                break
            t *= 0.5
        else:
            break
        f, g = fn, gn
    p = np.exp(f[:, None] + m + g[None, :])
    err = max(np.max(np.abs(p.sum(axis=1) - a)), np.max(np.abs(p.sum(axis=0) - b)))
    return f, g, err


def dense_entropic_reference(mu, nu, cost, lam: float, tol: float = 1e-12,
                             max_iterations: int = 100_000):
    """High-precision entropic OT on the full support.

    Log-domain alternating projections are run on a geometric ladder of
    ``lambda`` values (doubling up to the target) so that large ``lambda``
    starts close to its solution; damped Newton steps on the dual then drive
    the marginal error below ``tol``. Returns ``(distance, phi, psi)`` with
    ``P_ij = exp(lam (phi_i + psi_j - C_ij))``.

    Raises
    ------
    NonConvergence
        The marginal error is still above ``tol`` after ``max_iterations``
        sweeps plus the Newton stage.
    """
    a, b, c = _arr(mu), _arr(nu), _arr(cost)
    if a.size > MAX_REFERENCE_D:
        raise ValueError(f"reference limited to d <= {MAX_REFERENCE_D}")
    # zero-mass atoms are dropped; their potentials are the c-transform limit
    ra, rb = a > 0, b > 0
    log_a = np.log(a[ra])
    log_b = np.log(b[rb])
    cr = c[np.ix_(ra, rb)]
    a_r = np.exp(log_a)
    f = np.zeros(log_a.size)
    g = np.zeros(log_b.size)
    # anneal lambda upward by factors of two; each stage warm-starts the next
    stages = [float(lam)]
    while stages[-1] / 2.0 > 1.0:
        stages.append(stages[-1] / 2.0)
    stages.reverse()
    prev = stages[0]
    err = np.inf
    sweeps = 0
    for stage in stages:
        f *= stage / prev
        g *= stage / prev
        prev = stage
        m = -stage * cr
        last = stage == stages[-1]
        budget = max_iterations - sweeps if last else 100
        for _ in range(budget):
            g = log_b - logsumexp(m + f[:, None], axis=0)
            row = logsumexp(m + g[None, :], axis=1)
            err = np.max(np.abs(np.exp(f + row) - a_r))
            sweeps += 1
            if err < (1e-4 if not last else max(tol, 1e-4)):
                break
            f = log_a - row
        if last and err >= tol:
            g = log_b - logsumexp(m + f[:, None], axis=0)
            f, g, err = _newton_polish(f, g, log_a, log_b, m, lam, tol)
            while err >= tol and sweeps < max_iterations:
                # Newton stalled; take more plain sweeps and retry
                for _ in range(min(500, max_iterations - sweeps)):
                    f = log_a - logsumexp(m + g[None, :], axis=1)
                    g = log_b - logsumexp(m + f[:, None], axis=0)
                    sweeps += 1
                f, g, err = _newton_polish(f, g, log_a, log_b, m, lam, tol)
    if err >= tol:
        raise NonConvergence(f"reference solver stalled at marginal error {err:.3e}")
    log_p = f[:, None] + m + g[None, :]
    p = np.exp(log_p)
    ent = -np.sum(p * (log_p - 1.0))
    distance = float(np.sum(p * cr) - ent / lam)
    phi = np.empty(a.size)
    psi = np.empty(b.size)
    phi[ra] = f / lam
    psi[rb] = g / lam
    # c-transforms for atoms without mass keep the stationarity formula usable
    if (~ra).any():
        phi[~ra] = -logsumexp(-lam * c[np.ix_(~ra, rb)] + g[None, :], axis=1) / lam
    if (~rb).any():
        psi[~rb] = -logsumexp(-lam * c[np.ix_(ra, ~rb)] + f[:, None], axis=0) / lam
    return distance, phi, psi
