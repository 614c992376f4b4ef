"""GAE advantages, clipped PPO surrogate and clipped value regression.

Gradients are written out by hand for the tabular parameterization, which
keeps them checkable against finite differences.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from scipy.special import softmax

from wpr.trainer.policy import ToyPolicy, ValueFunction
from wpr.trajectory import Trajectory


def gae_advantages(rewards, values, gamma: float = 1.0, lambda_gae: float = 0.95):
    """Backward GAE recursion over one trajectory.

    ``delta_n = r_n + gamma V_{n+1} - V_n`` with the successor of the last
    step valued at zero, and ``A_n = delta_n + gamma lambda A_{n+1}``.
    Returns ``(advantages, return_targets)`` with ``G_n = A_n + V_n``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape:
        raise ValueError("rewards and values must have equal length")
    if not 0.0 < gamma <= 1.0 or not 0.0 <= lambda_gae <= 1.0:
        raise ValueError("need gamma in (0, 1] and lambda_gae in [0, 1]")
    n = r.size
    adv = np.zeros(n)
    nxt_v = 0.0
    running = 0.0
    for t in range(n - 1, -1, -1):
        delta = r[t] + gamma * nxt_v - v[t]
        running = delta + gamma * lambda_gae * running
        adv[t] = running
        nxt_v = v[t]
    return adv, adv + v


def clipped_surrogate(logits: np.ndarray, contexts, actions, old_log_probs, advantages,
                      clip_ratio: float = 0.2, clip: bool = True):
    """Mean clipped surrogate and its gradient w.r.t. the full logits table.

    ``rho = pi(a|s) / pi_old(a|s)``; each term is
    ``min(rho A, clip(rho, 1 - eps, 1 + eps) A)``. With ``clip=False`` the
    plain importance-weighted objective ``mean(rho A)`` is used.
    """
    ctx = np.asarray(contexts).ravel()
    act = np.asarray(actions).ravel()
    old = np.asarray(old_log_probs, dtype=np.float64).ravel()
    adv = np.asarray(advantages, dtype=np.float64).ravel()
    m = ctx.size
    grad = np.zeros_like(logits)
    if m == 0:
        return 0.0, grad
    z = logits[ctx]
    p = softmax(z, axis=1)
    logp = np.log(p[np.arange(m), act])
    rho = np.exp(logp - old)
    unclipped = rho * adv
    if clip:
        clipped = np.clip(rho, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
        obj = np.minimum(unclipped, clipped)
        # the clipped branch is flat in theta; only the unclipped one carries gradient
        active = unclipped <= clipped
    else:
        obj = unclipped
        active = np.ones(m, dtype=bool)
    coef = np.where(active, rho * adv, 0.0) / m
    g = -p * coef[:, None]
    g[np.arange(m), act] += coef
    np.add.at(grad, ctx, g)
    return float(obj.mean()), grad


def _stack(trajectories: Sequence[Trajectory], name: str) -> np.ndarray:
    parts = [np.asarray(getattr(t, name)) for t in trajectories]
    return np.concatenate(parts) if parts else np.zeros(0)


def ppo_policy_update(policy: ToyPolicy, old_policy: ToyPolicy,
                      trajectories: Sequence[Trajectory], cfg) -> tuple[ToyPolicy, float]:
    """One gradient-ascent step on the clipped surrogate.

    ``old_policy`` is the snapshot the batch was sampled from; its log-probs
    form the importance-ratio denominators. Advantages are whitened over the
    batch when ``cfg.whiten_advantages`` is set.
    """
    ctx = _stack(trajectories, "contexts").astype(np.int64)
    act = _stack(trajectories, "response").astype(np.int64)
    adv = _stack(trajectories, "advantage")
    if getattr(cfg, "whiten_advantages", False) and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    old = old_policy.log_prob(ctx, act)
    obj, grad = clipped_surrogate(policy.logits, ctx, act, old, adv, cfg.clip_ratio)
    new = policy.copy()
    new.logits += cfg.lr_policy * grad
    return new, obj


def value_loss(table: np.ndarray, positions, contexts, targets, old_values=None,
               clip_range: float | None = None):
    """Mean squared error to the return targets, with optional value clipping.

    With ``old_values`` and ``clip_range``, each term is
    ``max((V - G)^2, (V_old + clip(V - V_old, -c, c) - G)^2)``.
    Returns ``(loss, grad)`` where ``grad`` has the shape of ``table``.
    """
    pos = np.asarray(positions).ravel()
    ctx = np.asarray(contexts).ravel()
    g = np.asarray(targets, dtype=np.float64).ravel()
    grad = np.zeros_like(table)
    m = g.size
    if m == 0:
        return 0.0, grad
    v = table[pos, ctx]
    err = v - g
    loss_terms = err ** 2
    dv = 2.0 * err
    if old_values is not None and clip_range is not None:
        vo = np.asarray(old_values, dtype=np.float64).ravel()
        vc = vo + np.clip(v - vo, -clip_range, clip_range)
        clipped = (vc - g) ** 2
        inside = np.abs(v - vo) <= clip_range
        use_clip = clipped > loss_terms
        dv = np.where(use_clip, np.where(inside, 2.0 * (vc - g), 0.0), dv)
        loss_terms = np.maximum(loss_terms, clipped)
    np.add.at(grad, (pos, ctx), dv / m)
    return float(loss_terms.mean()), grad


def value_update(value_fn: ValueFunction, trajectories: Sequence[Trajectory],
                 cfg) -> tuple[ValueFunction, float]:
    """One gradient-descent step on the clipped value loss.

    The values stored on the trajectories at sampling time act as ``V_old``.
    """
    pos = np.concatenate([np.arange(len(t)) for t in trajectories]) if trajectories else np.zeros(0, int)
    ctx = _stack(trajectories, "contexts").astype(np.int64)
    targets = _stack(trajectories, "return_target")
    old = _stack(trajectories, "value")
    loss, grad = value_loss(value_fn.table, pos, ctx, targets, old, cfg.value_clip)
    new = value_fn.copy()
    new.table -= cfg.lr_value * grad
    return new, loss
