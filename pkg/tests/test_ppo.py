from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wpr.trainer import ToyPolicy, ValueFunction, clipped_surrogate, gae_advantages, value_loss
from wpr.trainer.ppo import ppo_policy_update, value_update
from wpr.trajectory import Trajectory

vectors = st.integers(1, 32).flatmap(
    lambda n: st.tuples(arrays(np.float64, n, elements=st.floats(-5, 5)),
                        arrays(np.float64, n, elements=st.floats(-5, 5))))


def gae_double_sum(r, v, gamma, lam):
    n = len(r)
    v_next = np.r_[v[1:], 0.0]
    delta = r + gamma * v_next - v
    return np.array([sum((gamma * lam) ** (m - t) * delta[m] for m in range(t, n)) for t in range(n)])


class TestGAE:
    def test_single_step(self):
        adv, ret = gae_advantages([1.0], [0.3], 1.0, 0.95)
        assert adv[0] == pytest.approx(0.7, abs=1e-15)
        assert ret[0] == pytest.approx(1.0, abs=1e-15)

    def test_td0_limit(self):
        r, v = np.array([0.5, -1.0, 2.0]), np.array([0.1, 0.4, -0.3])
        adv, _ = gae_advantages(r, v, 1.0, 0.0)
        np.testing.assert_allclose(adv, r + np.r_[v[1:], 0.0] - v, atol=1e-15)

    def test_monte_carlo_limit(self):
        r, v = np.array([0.5, -1.0, 2.0]), np.array([0.1, 0.4, -0.3])
        adv, ret = gae_advantages(r, v, 1.0, 1.0)
        np.testing.assert_allclose(adv, np.cumsum(r[::-1])[::-1] - v, atol=1e-14)
        np.testing.assert_allclose(ret, np.cumsum(r[::-1])[::-1], atol=1e-14)

    @given(vectors, st.floats(0.5, 1.0), st.floats(0.0, 1.0))
    def test_recursion_matches_double_sum(self, rv, gamma, lam):
        r, v = rv
        adv, _ = gae_advantages(r, v, gamma, lam)
        np.testing.assert_allclose(adv, gae_double_sum(r, v, gamma, lam), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("gamma,lam", [(0.0, 0.5), (1.5, 0.5), (1.0, -0.1), (1.0, 1.1)])
    def test_bad_parameters(self, gamma, lam):
        with pytest.raises(ValueError):
            gae_advantages([1.0], [0.0], gamma, lam)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            gae_advantages([1.0, 2.0], [0.0], 1.0, 0.95)


def _batch(seed, m=12, d=4, n_ctx=4, spread=0.1):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(n_ctx, d))
    ctx = rng.integers(n_ctx, size=m)
    act = rng.integers(d, size=m)
    old_logits = logits + spread * rng.normal(size=logits.shape)
    old = ToyPolicy(old_logits, 1, d).log_prob(ctx, act)
    adv = rng.normal(size=m)
    return logits, ctx, act, old, adv


def _finite_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestSurrogate:
    def test_identical_policies_give_mean_advantage(self):
        logits, ctx, act, _, adv = _batch(0)
        old = ToyPolicy(logits, 1, 4).log_prob(ctx, act)
        obj, _ = clipped_surrogate(logits, ctx, act, old, adv)
        assert obj == pytest.approx(adv.mean(), abs=1e-15)

    def test_zero_advantage_zero_gradient(self):
        logits, ctx, act, old, _ = _batch(1)
        _, grad = clipped_surrogate(logits, ctx, act, old, np.zeros(ctx.size))
        np.testing.assert_array_equal(grad, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_unclipped_gradient_matches_finite_differences(self, seed):
        logits, ctx, act, old, adv = _batch(seed)
        _, grad = clipped_surrogate(logits, ctx, act, old, adv, clip=False)
        fd = _finite_difference(lambda z: clipped_surrogate(z, ctx, act, old, adv, clip=False)[0], logits)
        rel = np.abs(grad - fd).max() / np.abs(fd).max()
        assert rel <= 1e-5

    @pytest.mark.parametrize("seed", range(5))
    def test_clipped_gradient_matches_finite_differences(self, seed):
        # ratios at 1 +- eps are kinks of the objective; keep samples away from them
        logits, ctx, act, old, adv = _batch(seed, m=24, spread=0.5)
        rho = np.exp(ToyPolicy(logits, 1, 4).log_prob(ctx, act) - old)
        keep = np.abs(np.abs(rho - 1) - 0.2) > 1e-3
        ctx, act, old, adv, rho = ctx[keep], act[keep], old[keep], adv[keep], rho[keep]
        flat = ((adv > 0) & (rho > 1.2)) | ((adv < 0) & (rho < 0.8))
        assert flat.any() and not flat.all()
        _, grad = clipped_surrogate(logits, ctx, act, old, adv, clip_ratio=0.2)
        fd = _finite_difference(lambda z: clipped_surrogate(z, ctx, act, old, adv, 0.2)[0], logits)
        np.testing.assert_allclose(grad, fd, atol=1e-5 * max(np.abs(fd).max(), 1e-12))

    def test_clipping_caps_objective(self):
        logits = np.zeros((1, 2))
        old = np.log([0.1])
        obj, grad = clipped_surrogate(logits, [0], [0], old, [1.0], clip_ratio=0.2)
        assert obj == pytest.approx(1.2)
        np.testing.assert_array_equal(grad, 0.0)

    def test_empty_batch(self):
        obj, grad = clipped_surrogate(np.zeros((2, 2)), [], [], [], [])
        assert obj == 0.0 and not grad.any()


class TestValueLoss:
    def test_zero_at_targets(self):
        table = np.array([[1.0, 2.0]])
        loss, grad = value_loss(table, [0, 0], [0, 1], [1.0, 2.0])
        assert loss == 0.0 and not grad.any()

    def test_single_sample(self):
        loss, grad = value_loss(np.zeros((1, 1)), [0], [0], [2.0])
        assert loss == 4.0
        assert grad[0, 0] == -4.0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        table = rng.normal(size=(3, 4))
        pos, ctx = rng.integers(3, size=10), rng.integers(4, size=10)
        targets = rng.normal(size=10)
        old = table[pos, ctx] + rng.normal(scale=0.5, size=10)
        _, grad = value_loss(table, pos, ctx, targets, old, 0.2)
        fd = _finite_difference(lambda t: value_loss(t, pos, ctx, targets, old, 0.2)[0], table)
        np.testing.assert_allclose(grad, fd, atol=1e-6)

    def test_clipped_loss_is_pessimistic(self):
        loss, _ = value_loss(np.array([[1.0]]), [0], [0], [1.0], old_values=[0.0], clip_range=0.2)
        assert loss == pytest.approx(0.64)


def _traj(ctx, act, adv, ret, val, d):
    n = len(ctx)
    z = np.zeros(n)
    return Trajectory(prompt=np.zeros(1), response=np.asarray(act), contexts=np.asarray(ctx),
                      pi_theta=np.full((n, d), 1 / d), pi_ref=np.full((n, d), 1 / d), reward=z,
                      penalized_reward=z, value=np.asarray(val, float), log_prob_current=z,
                      log_prob_old=z, advantage=np.asarray(adv, float), return_target=np.asarray(ret, float))


class TestUpdates:
    def test_policy_step_raises_positive_advantage_actions(self):
        pol = ToyPolicy.uniform(3, 1)
        cfg = SimpleNamespace(clip_ratio=0.2, lr_policy=1.0, whiten_advantages=True)
        t = _traj([0, 0], [1, 2], [1.0, -1.0], [0, 0], [0, 0], 3)
        new, obj = ppo_policy_update(pol, pol, [t], cfg)
        p = new.probs([0])[0]
        assert p[1] > 1 / 3 > p[2]
        assert obj == pytest.approx(0.0, abs=1e-8)

    def test_value_step_moves_toward_targets(self):
        vf = ValueFunction.zeros(2, 2)
        cfg = SimpleNamespace(lr_value=0.1, value_clip=None)
        t = _traj([0, 1], [0, 0], [0, 0], [1.0, -1.0], [0.0, 0.0], 2)
        new, loss = value_update(vf, [t], cfg)
        assert loss == pytest.approx(1.0)
        np.testing.assert_allclose(new.table[[0, 1], [0, 1]], [0.1, -0.1])
