"""Sampling, reference fitting and the regularized PPO training loop.

Each step samples a batch from the current policy (which is also the
importance-sampling snapshot, since the snapshot is refreshed every step),
scores it, shapes the per-token rewards with the chosen regularizer, runs GAE
and applies one policy step and one value step.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from wpr.cost_kernel import build_cost_matrix, build_sparse_kernel
from wpr.divergences import DivergenceKind, token_penalty
from wpr.errors import NumericalBlowup
from wpr.penalty import PenaltyConfig, penalty_batch
from wpr.sinkhorn import SinkhornConfig
from wpr.trainer.env import SyntheticEnv
from wpr.trainer.policy import ToyPolicy, ValueFunction
from wpr.trainer.ppo import gae_advantages, ppo_policy_update, value_update
from wpr.trajectory import Trajectory

log = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "mean_reward", "mean_penalty", "mean_kl_ref", "mean_w_ref",
                 "duality_gap_max", "converged_fraction")


@dataclass(frozen=True)
class Regularizer:
    """``wpr``, ``fdiv`` (with a divergence kind) or ``none``."""

    kind: str = "wpr"
    beta: float = 0.05
    divergence: DivergenceKind | None = None

    def __post_init__(self):
        if self.kind not in ("wpr", "fdiv", "none"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.kind == "fdiv" and self.divergence is None:
            raise ValueError("fdiv regularizer needs a divergence kind")
        if not self.beta >= 0:
            raise ValueError("beta must be nonnegative")

    @property
    def label(self) -> str:
        if self.kind == "fdiv":
            return self.divergence.name
        return self.kind

    @classmethod
    def parse(cls, text: str, beta: float) -> Regularizer:
        t = text.strip().lower()
        if t in ("wpr", "wasserstein"):
            return cls("wpr", beta)
        if t in ("none", "off"):
            return cls("none", 0.0)
        return cls("fdiv", beta, DivergenceKind.parse(t))


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 1.0
    lambda_gae: float = 0.95
    clip_ratio: float = 0.2
    value_clip: float = 0.2
    lr_policy: float = 20.0
    lr_value: float = 20.0
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    max_response_len: int = 8
    temperature: float = 0.8
    regularizer: Regularizer = field(default_factory=Regularizer)
    whiten_advantages: bool = True
    # transport settings, used by the WPR penalty and the distance metric
    lam: float = 100.0
    k1: int = 64
    k2: int = 16
    sinkhorn_iters: int = 50
    tol: float = 1e-4
    metric: str = "euclidean"
    dummy_cost: float | None = None
    # f-divergence penalties are clamped on the training path only
    clamp: tuple[float, float] = (-50.0, 50.0)
    # supervised fit of the reference policy
    sft_steps: int = 200
    sft_samples: int = 16
    lr_sft: float = 5.0

    def __post_init__(self):
        if not self.clip_ratio > 0:
            raise ValueError("clip_ratio must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.lambda_gae <= 1.0:
            raise ValueError("lambda_gae must lie in [0, 1]")
        if self.lr_policy <= 0 or self.lr_value <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.steps < 0 or self.max_response_len < 1:
            raise ValueError("batch_size and max_response_len must be >= 1, steps >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class TrainResult:
    policy: ToyPolicy
    value: ValueFunction
    reference: ToyPolicy
    metrics: list[dict]
    clamp_activations: int = 0
    finite: bool = True


def transport_config(cfg: TrainConfig, env: SyntheticEnv) -> PenaltyConfig:
    cost = build_cost_matrix(env.embeddings, cfg.metric)
    kernel = build_sparse_kernel(cost, cfg.lam, cfg.k1)
    sk = SinkhornConfig(lam=cfg.lam, max_iterations=cfg.sinkhorn_iters, tol=cfg.tol)
    beta = cfg.regularizer.beta if cfg.regularizer.kind == "wpr" else 0.0
    return PenaltyConfig(beta=beta, k2=cfg.k2, kernel=kernel, sinkhorn=sk,
                         dummy_cost=cfg.dummy_cost)


def fit_reference(env: SyntheticEnv, steps: int = 200, samples: int = 16, lr: float = 5.0,
                  seed: int = 0) -> ToyPolicy:
    """Supervised fit of the reference policy on preferred continuations.

    Every step draws ``samples`` preferred next tokens for every context from
    the environment's teacher and takes one ascent step on the mean
    log-likelihood of that context's draws.
    """
    pol = ToyPolicy.uniform(env.d, env.context_window)
    if steps <= 0:
        return pol
    teacher = np.stack([env.teacher_probs(s) for s in range(env.n_contexts)])
    cdf = np.cumsum(teacher, axis=1)
    cdf[:, -1] = 1.0
    rows = np.arange(env.n_contexts)
    for step in range(steps):
        rng = np.random.default_rng([seed, 11, step])
        u = rng.random((env.n_contexts, samples))
        draws = np.minimum(
            np.stack([np.searchsorted(cdf[i], u[i], side="right") for i in rows]), env.d - 1
        )
        counts = np.zeros_like(pol.logits)
        np.add.at(counts, (np.repeat(rows, samples), draws.ravel()), 1.0)
        p = pol.probs(rows)
        pol.logits += lr * (counts / samples - p)
    return pol


def _draw(p: np.ndarray, u: float) -> int:
    c = np.cumsum(p)
    return int(min(np.searchsorted(c, u * c[-1], side="right"), p.size - 1))


def sample_trajectories(policy: ToyPolicy, env: SyntheticEnv, batch: int, rng_seed,
                        reference: ToyPolicy | None = None, temperature: float = 0.8,
                        max_response_len: int | None = None,
                        value_fn: ValueFunction | None = None) -> list[Trajectory]:
    """Sample ``batch`` responses autoregressively.

    Trajectory ``i`` draws from its own generator seeded with
    ``(*rng_seed, i)``, so results do not depend on batch order.
    ``temperature=0`` takes the argmax. Rewards are zero except on the last
    step, which carries the sequence reward.
    """
    seed = tuple(np.atleast_1d(rng_seed).tolist())
    n = env.max_response_len if max_response_len is None else max_response_len
    reference = policy if reference is None else reference
    out = []
    for i in range(batch):
        rng = np.random.default_rng([*seed, i])
        prompt = env.prompts[rng.integers(env.prompts.shape[0])]
        unif = rng.random(n)
        window = list(prompt)
        ctx = np.zeros(n, dtype=np.int64)
        resp = np.zeros(n, dtype=np.int64)
        for t in range(n):
            ctx[t] = env.context_id(window)
            row = policy.logits[ctx[t]]
            if temperature == 0:
                resp[t] = int(np.argmax(row))
            else:
                z = row / temperature
                resp[t] = _draw(np.exp(z - z.max()), unif[t])
            window.append(resp[t])
        pi_t = policy.probs(ctx)
        pi_r = reference.probs(ctx)
        logp = np.log(pi_t[np.arange(n), resp])
        reward = np.zeros(n)
        reward[-1] = env.reward(resp)
        values = value_fn(np.arange(n), ctx) if value_fn is not None else np.zeros(n)
        out.append(Trajectory(prompt=np.asarray(prompt), response=resp, contexts=ctx,
                              pi_theta=pi_t, pi_ref=pi_r, reward=reward,
                              penalized_reward=reward.copy(), value=values,
                              log_prob_current=logp, log_prob_old=logp.copy()))
    return out


def mean_policy_reward(policy: ToyPolicy, env: SyntheticEnv, batches: int, batch: int,
                       seed: int = 0, temperature: float = 0.8) -> float:
    """Average sequence reward of ``policy`` over fresh samples."""
    total = []
    for b in range(batches):
        trajs = sample_trajectories(policy, env, batch, (seed, 99, b), temperature=temperature)
        total.extend(float(t.reward[-1]) for t in trajs)
    return float(np.mean(total))


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    pf = np.maximum(p, 1e-30)
    qf = np.maximum(q, 1e-30)
    return np.sum(np.where(p > 0, pf * (np.log(pf) - np.log(qf)), 0.0), axis=-1)


def train(cfg: TrainConfig, env: SyntheticEnv, reference: ToyPolicy | None = None,
          on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """Run the regularized PPO loop for ``cfg.steps`` updates.

    One metrics record is produced per sampled batch: step 0 describes the
    starting policy and step ``k`` the policy after ``k`` updates, so a run
    yields ``cfg.steps + 1`` records.

    Raises
    ------
    NumericalBlowup
        A loss, reward or parameter became non-finite.
    """
    if reference is None:
        reference = fit_reference(env, cfg.sft_steps, cfg.sft_samples, cfg.lr_sft, cfg.seed)
    policy = reference.copy()
    value_fn = ValueFunction.zeros(cfg.max_response_len, env.n_contexts)
    pcfg = transport_config(cfg, env)
    reg = cfg.regularizer
    lo, hi = cfg.clamp
    metrics: list[dict] = []
    clamps = 0

    for step in range(cfg.steps + 1):
        old_policy = policy
        trajs = sample_trajectories(old_policy, env, cfg.batch_size, (cfg.seed, step),
                                    reference=reference, temperature=cfg.temperature,
                                    max_response_len=cfg.max_response_len, value_fn=value_fn)
        pt = np.concatenate([t.pi_theta for t in trajs])
        pr = np.concatenate([t.pi_ref for t in trajs])
        acts = np.concatenate([t.response for t in trajs])
        ot = penalty_batch(pt, pr, acts, pcfg)
        if reg.kind == "wpr":
            pen = ot.phi
        elif reg.kind == "fdiv":
            raw = token_penalty(reg.divergence, pt[np.arange(acts.size), acts],
                                pr[np.arange(acts.size), acts])
            clamps += int(np.sum((raw < lo) | (raw > hi)))
            pen = np.clip(raw, lo, hi)
        else:
            pen = np.zeros(acts.size)
        n = cfg.max_response_len
        for i, t in enumerate(trajs):
            t.penalty = pen[i * n:(i + 1) * n].copy()
            t.penalized_reward = t.reward - reg.beta * t.penalty
            t.advantage, t.return_target = gae_advantages(t.penalized_reward, t.value,
                                                          cfg.gamma, cfg.lambda_gae)

        rewards = np.array([t.reward[-1] for t in trajs])
        rec = {
            "step": step,
            "mean_reward": float(rewards.mean()),
            "mean_penalty": float(pen.mean()),
            "mean_kl_ref": float(_kl_rows(pt, pr).mean()),
            "mean_w_ref": float(ot.distance.mean()),
            "duality_gap_max": float(ot.duality_gap.max()),
            "converged_fraction": float(ot.converged.mean()),
        }
        if not all(math.isfinite(v) for v in rec.values()):
            raise NumericalBlowup(f"non-finite metrics at step {step}: {rec}")
        metrics.append(rec)
        if on_record is not None:
            on_record(rec)
        if step == cfg.steps:
            break

        policy, _ = ppo_policy_update(policy, old_policy, trajs, cfg)
        value_fn, vloss = value_update(value_fn, trajs, cfg)
        if not (math.isfinite(vloss) and np.all(np.isfinite(policy.logits))):
            raise NumericalBlowup(f"non-finite update at step {step}")
    return TrainResult(policy=policy, value=value_fn, reference=reference, metrics=metrics,
                       clamp_activations=clamps)
